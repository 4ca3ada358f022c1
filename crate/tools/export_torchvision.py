#!/usr/bin/env python3
"""Export a torchvision-style ResNet state_dict as a trunk weight file.

The output is the self-describing tensor container the `emoctx` crate
reads (magic "EMKT"), written under the canonical name
`<backbone>_<scheme>.ckpt`. Typical uses:

    # ImageNet-pretrained trunk straight from torchvision:
    python tools/export_torchvision.py --backbone resnet18 --scheme object \
        --torchvision --out exported/

    # Scene-classification trunk from a local checkpoint (e.g. Places365):
    python tools/export_torchvision.py --backbone resnet18 --scheme scene \
        --state-dict resnet18_places365.pth.tar --out exported/

    # Validate and install where the toolkit looks for it:
    emoctx fetch-weights --from exported/resnet18_object.ckpt --dest weights/

Classifier heads (`fc.*`) and BatchNorm step counters
(`*.num_batches_tracked`) are dropped; every other tensor keeps its
state_dict name, which already matches the crate's trunk layout.
Requires torch to read checkpoints (and torchvision for --torchvision).
"""

import argparse
import json
import struct
import sys
from pathlib import Path

MAGIC = b"EMKT"
VERSION = 1
FORMAT_TAG = "emoctx.container.v1"
TRUNK_KIND = "trunk"

# Tensor counts of the two supported trunks after dropping fc.* and
# num_batches_tracked; anything else means the checkpoint is not the
# architecture it claims to be.
EXPECTED_TENSORS = {"resnet18": 100, "resnet50": 265}

SCHEMES = ("object", "scene")


def write_container(path, kind, meta, tensors):
    """Write `tensors` — an iterable of (name, numpy float array) — to
    `path` in the container layout: magic, u32 version, u64 header
    length, JSON header, then f32 little-endian payloads in header
    order."""
    entries = []
    payloads = []
    for name, arr in tensors:
        data = arr.astype("<f4", copy=False)
        entries.append({"name": name, "shape": list(data.shape)})
        payloads.append(data.tobytes(order="C"))
    header = json.dumps(
        {"format_tag": FORMAT_TAG, "kind": kind, "meta": meta, "tensors": entries},
        separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for payload in payloads:
            f.write(payload)


def trunk_tensors(state_dict):
    """Keep the trunk parameters and running statistics, in checkpoint
    order, as (name, numpy array) pairs."""
    kept = []
    for name, value in state_dict.items():
        name = name.removeprefix("module.")
        if name.startswith("fc.") or name.endswith("num_batches_tracked"):
            continue
        kept.append((name, value.detach().cpu().numpy()))
    return kept


def load_state_dict(args):
    import torch

    if args.torchvision:
        import torchvision.models as models

        model = getattr(models, args.backbone)(weights="IMAGENET1K_V1")
        return model.state_dict(), f"torchvision {args.backbone} IMAGENET1K_V1"
    obj = torch.load(args.state_dict, map_location="cpu", weights_only=False)
    # Training checkpoints often wrap the state_dict.
    if isinstance(obj, dict) and "state_dict" in obj:
        obj = obj["state_dict"]
    if not isinstance(obj, dict):
        sys.exit(f"error: {args.state_dict} does not contain a state_dict")
    return obj, str(args.state_dict)


def main():
    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--backbone", required=True, choices=sorted(EXPECTED_TENSORS))
    parser.add_argument(
        "--scheme",
        required=True,
        choices=SCHEMES,
        help="what the trunk was pretrained to classify: object or scene",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument(
        "--torchvision",
        action="store_true",
        help="download the ImageNet weights via torchvision",
    )
    source.add_argument(
        "--state-dict", type=Path, help="a .pth/.pth.tar checkpoint to convert"
    )
    parser.add_argument(
        "--out", type=Path, default=Path("."), help="output directory (default: .)"
    )
    args = parser.parse_args()

    state_dict, origin = load_state_dict(args)
    tensors = trunk_tensors(state_dict)
    expected = EXPECTED_TENSORS[args.backbone]
    if len(tensors) != expected:
        sys.exit(
            f"error: {origin} yields {len(tensors)} trunk tensors, "
            f"{args.backbone} needs exactly {expected}"
        )
    dest = args.out / f"{args.backbone}_{args.scheme}.ckpt"
    meta = {"backbone": args.backbone, "scheme": args.scheme, "origin": origin}
    write_container(dest, TRUNK_KIND, meta, tensors)
    print(f"wrote {dest} ({len(tensors)} tensors)")


if __name__ == "__main__":
    main()
