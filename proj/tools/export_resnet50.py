#!/usr/bin/env python3
"""Convert a torchvision ResNet-50 state_dict into an sgz backbone archive.

Only the convolution kernels and batch-norm statistics of the trunk are kept;
the classifier head and bookkeeping counters are dropped.

    python tools/export_resnet50.py --pretrained resnet50.sgz
    python tools/export_resnet50.py --state-dict weights.pth resnet50.sgz
"""

import argparse
import json
import struct
import sys

import numpy as np

MAGIC = b"SGZARCH1"
KIND = "sgz-resnet50"
KEEP_SUFFIXES = (".weight", ".bias", ".running_mean", ".running_var")


def load_state_dict(args):
    import torch

    if args.state_dict:
        state = torch.load(args.state_dict, map_location="cpu")
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        return state, args.state_dict
    import torchvision

    if args.pretrained:
        weights = torchvision.models.ResNet50_Weights.IMAGENET1K_V1
        return torchvision.models.resnet50(weights=weights).state_dict(), str(weights)
    return torchvision.models.resnet50(weights=None).state_dict(), "untrained"


def trunk_arrays(state):
    out = []
    for name, tensor in state.items():
        if name.startswith("fc.") or not name.endswith(KEEP_SUFFIXES):
            continue
        out.append((name, tensor.detach().cpu().numpy().astype("<f4")))
    return out


def write_archive(path, arrays, metadata):
    entries = []
    offset = 0
    for name, values in arrays:
        entries.append({"name": name, "shape": list(values.shape), "dtype": "f32", "offset": offset})
        offset += values.size * 4
    manifest = {
        "format": "sgz-archive",
        "format_version": 1,
        "kind": KIND,
        "metadata": metadata,
        "arrays": entries,
        "payload_bytes": offset,
    }
    text = json.dumps(manifest, indent=1).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for _, values in arrays:
            f.write(np.ascontiguousarray(values).tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("output", help="destination .sgz archive")
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--pretrained", action="store_true", help="download torchvision ImageNet weights")
    source.add_argument("--state-dict", help="path to a saved ResNet-50 state_dict")
    args = parser.parse_args()

    state, origin = load_state_dict(args)
    arrays = trunk_arrays(state)
    convs = sum(v.size for n, v in arrays if v.ndim == 4)
    write_archive(args.output, arrays, {"source": origin})
    print(f"wrote {len(arrays)} arrays ({convs} convolution weights) to {args.output}", file=sys.stderr)


if __name__ == "__main__":
    main()
