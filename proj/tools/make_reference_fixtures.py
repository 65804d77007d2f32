#!/usr/bin/env python3
"""Builds tiny random-weight CLIP checkpoints plus reference outputs computed by open_clip.

The C++ towers are checked against these: tokenization, text/image embeddings,
probabilities, ResNet Grad-CAM gradients and ViT attention relevance.
References are evaluated in float64 from the float16-rounded weights that get saved.

    python3 tools/make_reference_fixtures.py tests/fixtures
"""
import json
import pathlib
import sys

import numpy as np
import open_clip
import torch
from open_clip.model import CLIP, CLIPTextCfg, CLIPVisionCfg
from PIL import Image
from safetensors.torch import save_file

MEAN = (0.48145466, 0.4578275, 0.40821073)
STD = (0.26862954, 0.26130258, 0.27577711)

TEXTS = [
    "The label for this image is bouba",
    "This is a kiki",
    "A picture of a spiky object",
    "loonah",
]

TOKEN_CASES = TEXTS + [
    "kitaki",
    "bodubo",
    "This drawing is   JAGGED!",
    "A <label> object",
    "it's 1990 o'clock, we'll see",
    "keepuh puhtay maluma takete",
]

TEXT_CFG = CLIPTextCfg(context_length=77, vocab_size=49408, width=16, heads=2, layers=2)

MODELS = {
    "tiny_rn": dict(
        vision=CLIPVisionCfg(layers=(2, 1, 1, 1), width=8, head_width=64, image_size=128),
        vision_heads=4,
    ),
    "tiny_vit": dict(
        vision=CLIPVisionCfg(layers=2, width=32, head_width=16, patch_size=16, image_size=64),
        vision_heads=2,
    ),
}


def randomize(model, gen):
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name == "logit_scale":
                p.fill_(np.log(100.0))
            elif name.endswith(".weight") and p.ndim == 1:  # norm gains
                p.copy_(1.0 + 0.2 * torch.randn(p.shape, generator=gen))
            elif p.ndim == 1:
                p.copy_(0.1 * torch.randn(p.shape, generator=gen))
            else:
                fan_in = p[0].numel() if p.ndim > 1 else p.shape[-1]
                if name.endswith("proj") or "embedding" in name:
                    fan_in = p.shape[0] if name.endswith("proj") else 4
                p.copy_(torch.randn(p.shape, generator=gen) / np.sqrt(fan_in))
        for name, b in model.named_buffers():
            if name.endswith("running_mean"):
                b.copy_(0.1 * torch.randn(b.shape, generator=gen))
            elif name.endswith("running_var"):
                b.copy_(0.5 + torch.rand(b.shape, generator=gen))
        # Round every tensor to half precision so both sides read identical values.
        for t in list(model.parameters()) + list(model.buffers()):
            if t.is_floating_point():
                t.copy_(t.half().float())


def test_image(size, seed):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = np.stack([np.sin(6 * xx + 1), np.cos(5 * yy), np.sin(4 * (xx + yy))], -1)
    img = 127.5 + 90 * base + rng.normal(0, 20, (size, size, 3))
    return np.clip(img, 0, 255).astype(np.uint8)


def to_input(img):
    x = img.astype(np.float64) / 255.0
    x = (x - np.array(MEAN)) / np.array(STD)
    return torch.from_numpy(x.transpose(2, 0, 1)[None].copy())


def vit_last_block(visual, pixels):
    """Reruns the final block with explicit attention probabilities as a leaf tensor."""
    x = visual._embeds(pixels)
    blocks = visual.transformer.resblocks
    for blk in blocks[:-1]:
        x = blk(x)
    blk = blocks[-1]
    attn = blk.attn
    n1 = blk.ln_1(x)
    w, b = attn.in_proj_weight, attn.in_proj_bias
    q, k, v = torch.nn.functional.linear(n1, w, b).chunk(3, dim=-1)
    heads = attn.num_heads
    T, W = q.shape[1], q.shape[2]
    d = W // heads

    def split(t):
        return t[0].reshape(T, heads, d).transpose(0, 1)

    probs = torch.softmax(split(q) @ split(k).transpose(1, 2) / np.sqrt(d), dim=-1)
    P = probs.detach().clone().requires_grad_(True)
    o = (P @ split(v)).transpose(0, 1).reshape(1, T, W)
    y = x + blk.ls_1(attn.out_proj(o))
    y = y + blk.ls_2(blk.mlp(blk.ln_2(y)))
    pooled = visual.ln_post(y)[:, 0] @ visual.proj
    return P, pooled, x[0]


def main(out_dir):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ref = {"tokens": [], "models": {}}
    for text in TOKEN_CASES:
        ids = open_clip.tokenize([text])[0].tolist()
        ref["tokens"].append({"text": text, "ids": [i for i in ids if i != 0]})

    for idx, (name, cfg) in enumerate(MODELS.items()):
        gen = torch.Generator().manual_seed(1234 + idx)
        model = CLIP(embed_dim=24, vision_cfg=cfg["vision"], text_cfg=TEXT_CFG, quick_gelu=True)
        model.eval()
        randomize(model, gen)
        state = {k: v.detach().half().contiguous() for k, v in model.state_dict().items() if k != "attn_mask"}
        state = {k: v for k, v in state.items() if not k.endswith("num_batches_tracked")}
        meta = {"vision_heads": str(cfg["vision_heads"]), "text_heads": str(TEXT_CFG.heads)}
        save_file(state, str(out / f"{name}.safetensors"), metadata=meta)

        model = model.double()
        size = cfg["vision"].image_size
        img = test_image(size, 99 + idx)
        Image.fromarray(img).save(out / f"{name}_image.png")
        pixels = to_input(img)

        tokens = open_clip.tokenize(TEXTS)
        with torch.no_grad():
            text_emb = model.encode_text(tokens)
            img_emb = model.encode_image(pixels)[0]
        text_unit = text_emb / text_emb.norm(dim=-1, keepdim=True)
        img_unit = img_emb / img_emb.norm()
        cos = text_unit @ img_unit
        probs = torch.softmax(model.logit_scale.exp() * cos, dim=0)
        entry = {
            "texts": TEXTS,
            "image": f"{name}_image.png",
            "text_embeddings": text_emb.tolist(),
            "image_embedding": img_emb.tolist(),
            "cosines": cos.tolist(),
            "probabilities": probs.tolist(),
            "logit_scale": float(model.logit_scale.exp()),
            "saliency": [],
        }

        for t in range(len(TEXTS)):
            tu = text_unit[t].detach()
            if name == "tiny_rn":
                captured = {}

                def keep(module, inputs, output):
                    output.retain_grad()
                    captured["a"] = output

                hook = model.visual.layer4.register_forward_hook(keep)
                emb = model.encode_image(pixels)[0]
                hook.remove()
                score = torch.dot(emb / emb.norm(), tu)
                score.backward()
                a = captured["a"][0].detach()
                g = captured["a"].grad[0]
                weights = g.mean(dim=(1, 2))
                cam = torch.relu((weights[:, None, None] * a).sum(0))
                entry["saliency"].append({
                    "score": float(score),
                    "channel_weights": weights.tolist(),
                    "grid": cam.tolist(),
                    "gradient_sample": [float(g[c, i // a.shape[2], i % a.shape[2]])
                                        for c, i in [(0, 0), (5, 3), (100, 7), (255, 15)]],
                })
                if t == 0:
                    entry["activation_shape"] = list(a.shape)
                    entry["activation_sum"] = float(a.sum())
            else:
                P, pooled, _ = vit_last_block(model.visual, pixels)
                assert torch.allclose(pooled[0], img_emb, atol=1e-9), "manual ViT replay diverged"
                score = torch.dot(pooled[0] / pooled[0].norm(), tu)
                score.backward()
                g = P.grad
                rel = torch.relu(g * P).mean(0)[0, 1:]
                grid = int(round(rel.numel() ** 0.5))
                entry["saliency"].append({
                    "score": float(score),
                    "class_row_gradient": g[:, 0, :].tolist(),
                    "grid": rel.reshape(grid, grid).tolist(),
                })
                if t == 0:
                    entry["attention_class_row"] = P[:, 0, :].detach().tolist()
        ref["models"][name] = entry

    (out / "reference.json").write_text(json.dumps(ref, indent=1))
    print("wrote", out)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures")
