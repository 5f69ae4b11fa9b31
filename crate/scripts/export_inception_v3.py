#!/usr/bin/env python3
"""Export Keras Inception-v3 trunk weights to the safetensors layout read by `lus`.

Tensors are named by Keras creation index: conv{i}.kernel [kh, kw, cin, cout],
bn{i}.beta / bn{i}.moving_mean / bn{i}.moving_variance [cout].

    python scripts/export_inception_v3.py --out inception_v3.safetensors

With --reference DIR a deterministic probe image and the Keras pooled features
for it are also written, so the Rust implementation can be checked against
Keras (see crates/core/tests/inception_reference.rs).
"""
import argparse
import json
import os
import re
import struct

import numpy as np


def creation_index(name, prefix):
    if name == prefix:
        return 0
    m = re.fullmatch(prefix + r"_(\d+)", name)
    return int(m.group(1)) if m else None


def write_safetensors(path, tensors):
    header, offset, blobs = {}, 0, []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        data = arr.tobytes()
        header[name] = {"dtype": "F32", "shape": list(arr.shape), "data_offsets": [offset, offset + len(data)]}
        offset += len(data)
        blobs.append(data)
    raw = json.dumps(header).encode()
    raw += b" " * (-len(raw) % 8)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for b in blobs:
            f.write(b)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--weights", default="imagenet", help="'imagenet' or 'none' (random init)")
    ap.add_argument("--side", type=int, default=299)
    ap.add_argument("--randomize-bn", action="store_true", help="perturb batch-norm statistics (testing)")
    ap.add_argument("--reference", help="directory for probe image + Keras features")
    args = ap.parse_args()

    import tensorflow as tf

    tf.keras.backend.clear_session()
    weights = None if args.weights == "none" else args.weights
    model = tf.keras.applications.InceptionV3(
        include_top=False, weights=weights, pooling="avg", input_shape=(args.side, args.side, 3)
    )
    rng = np.random.default_rng(0)
    convs, bns = {}, {}
    for layer in model.layers:
        cls = type(layer).__name__
        if cls == "Conv2D":
            convs[creation_index(layer.name, "conv2d")] = layer
        elif cls == "BatchNormalization":
            bns[creation_index(layer.name, "batch_normalization")] = layer
    if None in convs or None in bns or len(convs) != len(bns):
        raise SystemExit("unexpected layer naming; run in a fresh process")

    # Keras numbers layers per session, so shift to a zero-based contiguous index.
    conv_keys, bn_keys = sorted(convs), sorted(bns)
    tensors = {}
    for i, (ck, bk) in enumerate(zip(conv_keys, bn_keys)):
        conv, bn = convs[ck], bns[bk]
        tensors[f"conv{i}.kernel"] = conv.get_weights()[0]
        w = {v.name.split("/")[-1].split(":")[0]: v for v in bn.weights}
        if args.randomize_bn:
            c = bn.weights[0].shape[0]
            w["beta"].assign(rng.normal(0, 0.1, c).astype("f4"))
            w["moving_mean"].assign(rng.normal(0, 0.1, c).astype("f4"))
            w["moving_variance"].assign(rng.uniform(0.5, 1.5, c).astype("f4"))
        for key in ("beta", "moving_mean", "moving_variance", "gamma"):
            if key in w:
                tensors[f"bn{i}.{key}"] = w[key].numpy()
    write_safetensors(args.out, tensors)
    print(f"wrote {len(conv_keys)} conv units to {args.out}")

    if args.reference:
        os.makedirs(args.reference, exist_ok=True)
        s = args.side
        yy, xx = np.meshgrid(np.arange(s), np.arange(s), indexing="ij")
        img = np.stack([np.sin(0.05 * yy + 0.03 * xx), np.cos(0.02 * xx), np.sin(0.07 * (xx - yy))], axis=-1)
        img = img.astype("f4")
        feats = model(img[None], training=False).numpy()[0]
        np.asarray(img, dtype="<f4").tofile(os.path.join(args.reference, "probe_input.f32"))
        np.asarray(feats, dtype="<f4").tofile(os.path.join(args.reference, "probe_features.f32"))
        print(f"reference features: {feats.shape}, mean {feats.mean():.6f}")


if __name__ == "__main__":
    main()
