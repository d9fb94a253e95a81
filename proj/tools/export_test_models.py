#!/usr/bin/env python3
# Copyright 2026 The VoxelSAM Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Exports ONNX graphs used by the integration and latency tests.

  tiny_encoder.onnx   small conv encoder, 64px input, (8, 16, 16) embedding
  sam_decoder.onnx    ViT-B mask decoder with the upstream ONNX interface
  reference.json      onnxruntime outputs for fixed inputs, used as test oracles

Pass --checkpoint to export the decoder with trained weights. Without one the
decoder keeps its random initialisation: the compute graph and tensor
interface are identical, so latency measurements remain meaningful, but masks
are not.
"""
import argparse
import json
import os
import sys
import warnings

SAM_MEAN = [123.675, 116.28, 103.53]
SAM_STD = [58.395, 57.12, 57.375]


def write_meta(path, side):
    with open(path + ".meta.json", "w") as f:
        json.dump({"input_side": side, "mean": SAM_MEAN, "std": SAM_STD}, f, indent=2)


def export_tiny_encoder(out_dir):
    import torch

    torch.manual_seed(7)

    class TinyEncoder(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.patch = torch.nn.Conv2d(3, 8, kernel_size=4, stride=4)
            self.mix = torch.nn.Conv2d(8, 8, kernel_size=3, padding=1)

        def forward(self, image):
            return self.mix(torch.tanh(self.patch(image)))

    path = os.path.join(out_dir, "tiny_encoder.onnx")
    torch.onnx.export(TinyEncoder().eval(), torch.zeros(1, 3, 64, 64), path,
                      input_names=["image"], output_names=["image_embeddings"],
                      opset_version=17, dynamo=False)
    write_meta(path, 64)
    return path


def export_sam_decoder(out_dir, checkpoint):
    import torch
    from segment_anything import sam_model_registry
    from segment_anything.utils.onnx import SamOnnxModel

    torch.manual_seed(11)
    sam = sam_model_registry["vit_b"](checkpoint=checkpoint)
    model = SamOnnxModel(sam, return_single_mask=True).eval()
    embed_dim = sam.prompt_encoder.embed_dim
    embed_size = sam.prompt_encoder.image_embedding_size
    mask_input_size = [4 * x for x in embed_size]
    dummy = {
        "image_embeddings": torch.randn(1, embed_dim, *embed_size, dtype=torch.float),
        "point_coords": torch.randint(low=0, high=1024, size=(1, 5, 2), dtype=torch.float),
        "point_labels": torch.randint(low=0, high=4, size=(1, 5), dtype=torch.float),
        "mask_input": torch.randn(1, 1, *mask_input_size, dtype=torch.float),
        "has_mask_input": torch.tensor([1], dtype=torch.float),
        "orig_im_size": torch.tensor([1500, 2250], dtype=torch.float),
    }
    path = os.path.join(out_dir, "sam_decoder.onnx")
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore")
        torch.onnx.export(model, tuple(dummy.values()), path,
                          input_names=list(dummy.keys()),
                          output_names=["masks", "iou_predictions", "low_res_masks"],
                          dynamic_axes={"point_coords": {1: "num_points"},
                                        "point_labels": {1: "num_points"}},
                          opset_version=17, do_constant_folding=True, dynamo=False)
    write_meta(path, sam.image_encoder.img_size)
    return path


def pattern(n, scale):
    import numpy as np
    return (np.sin(np.arange(n, dtype=np.float64) * 0.001) * scale).astype(np.float32)


def write_reference(out_dir):
    """Runs both graphs through onnxruntime on fixed inputs.

    Inputs are sin(0.001 * i) * scale over the flattened tensor so the C++
    side can rebuild them without shipping data files.
    """
    import numpy as np
    import onnxruntime as ort

    ref = {}
    enc_path = os.path.join(out_dir, "tiny_encoder.onnx")
    if os.path.exists(enc_path):
        sess = ort.InferenceSession(enc_path, providers=["CPUExecutionProvider"])
        x = pattern(3 * 64 * 64, 2.0).reshape(1, 3, 64, 64)
        (y,) = sess.run(None, {"image": x})
        ref["tiny_encoder"] = {"input_scale": 2.0, "shape": list(y.shape[1:]),
                               "sum": float(y.astype(np.float64).sum()),
                               "first": [float(v) for v in y.ravel()[:16]]}
    dec_path = os.path.join(out_dir, "sam_decoder.onnx")
    if os.path.exists(dec_path):
        sess = ort.InferenceSession(dec_path, providers=["CPUExecutionProvider"])
        emb = pattern(256 * 64 * 64, 0.5).reshape(1, 256, 64, 64)
        coords = np.array([[[500.0, 300.0], [120.0, 640.0], [0.0, 0.0]]], dtype=np.float32)
        labels = np.array([[1.0, 0.0, -1.0]], dtype=np.float32)
        masks, iou, low = sess.run(None, {
            "image_embeddings": emb, "point_coords": coords, "point_labels": labels,
            "mask_input": np.zeros((1, 1, 256, 256), dtype=np.float32),
            "has_mask_input": np.zeros(1, dtype=np.float32),
            "orig_im_size": np.array([200.0, 256.0], dtype=np.float32)})
        m = masks[0, 0].astype(np.float64)
        ref["sam_decoder"] = {"embedding_scale": 0.5,
                              "points": [[500.0, 300.0, 1.0], [120.0, 640.0, 0.0]],
                              "orig_size": [200, 256],
                              "iou": float(iou.ravel()[0]),
                              "mask_sum": float(m.sum()),
                              "mask_positive": int((m > 0).sum()),
                              "samples": [[r, c, float(m[r, c])] for r, c in
                                          [(0, 0), (57, 99), (117, 150), (199, 255), (100, 3)]],
                              "low_res_sum": float(low[0, 0].astype(np.float64).sum())}
    with open(os.path.join(out_dir, "reference.json"), "w") as f:
        json.dump(ref, f, indent=2)


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--checkpoint", default=None)
    ap.add_argument("--skip-decoder", action="store_true")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    try:
        import torch  # noqa: F401
    except ImportError:
        print("torch not available; skipping model export", file=sys.stderr)
        return 0
    if not os.path.exists(os.path.join(args.out, "tiny_encoder.onnx")):
        print("wrote", export_tiny_encoder(args.out))
    if not args.skip_decoder and not os.path.exists(os.path.join(args.out, "sam_decoder.onnx")):
        try:
            print("wrote", export_sam_decoder(args.out, args.checkpoint))
        except ImportError as e:
            print(f"segment_anything not available ({e}); decoder not exported", file=sys.stderr)
    try:
        write_reference(args.out)
    except ImportError as e:
        print(f"onnxruntime not available ({e}); no reference outputs", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
