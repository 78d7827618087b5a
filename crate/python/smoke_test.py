"""Smoke test for the isp_py extension: synthesize a tiny dataset, train
briefly, then run the model both ways on one image."""

import random
import sys
import tempfile
from pathlib import Path

import isp_py


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        manifest = isp_py.synth(str(tmp / "data"), train=2, val=1, size=16, seed=3)
        config = "epochs = 2\nsteps_per_epoch = 2\ncrop = 16\n"
        history = isp_py.train(str(manifest), str(tmp / "run"), config)
        assert len(history) == 2, history
        assert all(row[2] == row[2] for row in history), "non-finite loss"

        model = isp_py.Model.load(str(tmp / "run" / "model.ckpt"))
        assert model.step == 4
        h, w = 8, 10
        rng = random.Random(0)
        rgb = [rng.uniform(0.05, 0.8) for _ in range(h * w * 3)]
        raw = model.reverse(rgb, h, w)
        assert len(raw) == h * w and all(0.0 <= v <= 1.0 for v in raw)
        back = model.forward(raw, h, w)
        assert len(back) == h * w * 3
        _, cycle_db = model.cycle(rgb, h, w)
        assert cycle_db > 0.0

        identity = isp_py.psnr_db(rgb, rgb, 3, h, w)
        assert identity == 99.0, identity
        scores = isp_py.evaluate(str(tmp / "run" / "model.ckpt"), str(manifest))
        assert len(scores) == 1

        try:
            model.reverse(rgb[:-1], h, w)
        except ValueError:
            pass
        else:
            raise AssertionError("bad buffer length accepted")

    print(f"smoke test ok: {model.param_count} parameters, cycle {cycle_db:.2f} dB")
    return 0


if __name__ == "__main__":
    sys.exit(main())
