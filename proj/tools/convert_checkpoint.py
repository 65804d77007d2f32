#!/usr/bin/env python3
"""Converts the OpenAI CLIP checkpoints into the safetensors files the C++ loader reads.

    python3 tools/convert_checkpoint.py --out weights            # both models
    python3 tools/convert_checkpoint.py --out weights --model RN50 --source /path/RN50.pt

Tensors keep open_clip's state-dict names and are stored as float16. Head counts and the
activation go into the metadata because they cannot be recovered from tensor shapes alone.
"""
import argparse
import hashlib
import pathlib

import open_clip
import torch
from safetensors.torch import save_file

MODELS = {
    "RN50": {"vision_heads": 32, "text_heads": 8},
    "ViT-B-32": {"vision_heads": 12, "text_heads": 8},
}


def convert(name, source, out_dir):
    pretrained = source if source else "openai"
    model, _, _ = open_clip.create_model_and_transforms(name, pretrained=pretrained, precision="fp32")
    model.eval()
    state = {}
    for k, v in model.state_dict().items():
        if k == "attn_mask" or k.endswith("num_batches_tracked"):
            continue
        state[k] = v.detach().to(torch.float16).contiguous()
    meta = {k: str(v) for k, v in MODELS[name].items()}
    meta["activation"] = "quick_gelu"
    meta["source"] = str(pretrained)
    path = pathlib.Path(out_dir) / f"{name}.safetensors"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_file(state, str(path), metadata=meta)
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    print(f"{path}  {len(state)} tensors  sha256={digest}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="weights", help="weights directory")
    ap.add_argument("--model", choices=sorted(MODELS), action="append", help="default: all")
    ap.add_argument("--source", help="local checkpoint file instead of the open_clip download")
    args = ap.parse_args()
    names = args.model or sorted(MODELS)
    if args.source and len(names) != 1:
        ap.error("--source needs exactly one --model")
    for name in names:
        convert(name, args.source, args.out)


if __name__ == "__main__":
    main()
