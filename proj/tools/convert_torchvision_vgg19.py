#!/usr/bin/env python3
"""Converts torchvision's ImageNet VGG19 checkpoint to the safetensors file
read by semfuse.

    python3 tools/convert_torchvision_vgg19.py vgg19-dcbb9e9d.pth vgg19.safetensors

Without an input path the weights are fetched through torchvision
(needs network access to download.pytorch.org).
"""

import argparse
import hashlib
import os

import torch
from safetensors.torch import save_file


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("input", nargs="?", help="torchvision .pth state dict")
    ap.add_argument("output", help="safetensors file to write")
    args = ap.parse_args()

    if args.input:
        state = torch.load(args.input, map_location="cpu", weights_only=True)
        name = os.path.basename(args.input)
    else:
        import torchvision

        weights = torchvision.models.VGG19_Weights.IMAGENET1K_V1
        state = torchvision.models.vgg19(weights=weights).state_dict()
        name = weights.url.rsplit("/", 1)[-1]

    tensors = {k: v.detach().to(torch.float32).contiguous() for k, v in state.items()}
    digest = hashlib.sha256()
    for k in sorted(tensors):
        digest.update(k.encode())
        digest.update(tensors[k].numpy().tobytes())
    save_file(tensors, args.output, metadata={"checkpoint": "torchvision-" + name.removesuffix(".pth")})
    print(f"{len(tensors)} tensors -> {args.output} (content sha256 {digest.hexdigest()[:16]})")


if __name__ == "__main__":
    main()
