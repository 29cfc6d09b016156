"""
=============================================
Training the toy recogniser
=============================================

Render a small corpus, build bundles, train for a few epochs and score the
held-out split.  Pass a larger corpus and more epochs on the command line
to go further::

    python demos/plot_05_toy_training.py 2400 30
"""

# %%
import sys
import tempfile
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from gatedhtr import toy
from gatedhtr.config import toy_config
from gatedhtr.pipeline import build_bundles, read_bundle
from gatedhtr.training import evaluate, train

n = int(sys.argv[1]) if len(sys.argv) > 1 else 1200
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 12
work = Path(tempfile.mkdtemp(prefix="toy_"))
cfg = toy_config(max_epochs=epochs)

toy.make_corpus(work / "corpus", n, seed=0)
paths = build_bundles(work / "corpus", work / "bundles", fractions=cfg.splits, seed=cfg.seed,
                      target=(cfg.input_width, cfg.input_height), illumination=False, deslant=True)
tr, va, te = (read_bundle(paths[s]) for s in ("train", "valid", "test"))
print(f"{len(tr)} train / {len(va)} valid / {len(te)} test, charset {tr.charset.to_text()!r}")

# %%
t0 = time.perf_counter()
with threadpool_limits(cfg.threads):
    res = train(cfg, tr, va, out_dir=work / "run",
                on_epoch=lambda e, tl, vl, imp: print(f"epoch {e:2d}  train {tl:7.3f}  valid {vl:7.3f}{' *' if imp else ''}"))
    rep = evaluate(res.model, te)
print(f"best epoch {res.best_epoch}; test CER {rep.cer:.3f} WER {rep.wer:.3f} SER {rep.ser:.3f} "
      f"({time.perf_counter() - t0:.0f}s, artifacts in {work})")
