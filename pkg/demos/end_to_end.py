"""Walk through the whole pipeline on a small synthetic dataset.

    python demos/end_to_end.py [OUT_DIR]

Steps: generate faces with ground-truth depth, pretrain the reconstruction
network, train the detector on top of the frozen reconstruction, then report
test AUC and how well predicted depth tracks the ground truth. Takes about a
minute on one CPU thread.
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from m3dnet import desk_config
from m3dnet.datakit import SynthFaceSpec, synth_faces
from m3dnet.evalkit import evaluate
from m3dnet.trainer import load_recon, pretrain_recon, train_detector


def main(out: Path) -> None:
    torch.set_num_threads(1)
    cfg = desk_config({"train.pretrain_epochs": 20, "train.epochs": 30, "train.checkpoint_every": 5,
                       "train.pretrain_batch_size": 4})
    data = synth_faces(SynthFaceSpec(count=64, image_size=64, seed=0))
    manifest = data.write(out / "data")
    print(f"dataset: {len(data)} images, manifest at {manifest}")

    pre = pretrain_recon(cfg, data, out / "recon")
    first, last = pre.epoch_records[0]["l_rec_mean"], pre.epoch_records[-1]["l_rec_mean"]
    print(f"reconstruction loss: {first:.3f} -> {last:.3f} over {len(pre.epoch_records)} epochs")

    recon = load_recon(pre.checkpoint).eval()
    reals = [i for i in data.depth if data.splits[i] != "train"]
    with torch.no_grad():
        pred = recon.predict_depth(data.images[reals])
    corr = [np.corrcoef(pred[k, 0].flatten().numpy(), data.depth[i][0].flatten().numpy())[0, 1]
            for k, i in enumerate(reals)]
    print(f"held-out depth Pearson: mean {np.mean(corr):.3f} over {len(corr)} reals")

    det = train_detector(cfg, data, pre.checkpoint, out / "detector")
    print(f"detector train AUC by epoch: {[round(r['train_auc'], 3) for r in det.epoch_records]}")

    report = evaluate(det.checkpoint, data, split="test", recon_checkpoint=pre.checkpoint)
    print(f"test AUC {report.auc:.3f} on {report.n_real} real / {report.n_fake} fake")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))
