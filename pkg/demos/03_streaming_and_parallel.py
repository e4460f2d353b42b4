"""Streaming accumulation and deterministic parallel reduction.

The fit never materializes the stacked frame matrix: each utterance folds a
rank-1 contribution into (P+1)x(P+1) and (P+1)xQ statistics. Workers can
process utterances independently and merge partials; in deterministic mode
the reduction order is fixed, so any worker count gives bit-identical sums.

Run: python3 demos/03_streaming_and_parallel.py
"""

import numpy as np

from etakit import core

rng = np.random.default_rng(0)
P, Q = 6, 32
utts = []
for i in range(200):
    k = int(rng.integers(20, 120))
    utts.append((
        core.ReducedEmbedding(rng.normal(size=P)),
        core.FrameMatrix(rng.normal(size=(k, Q)), f"utt{i:03d}"),
    ))

# one worker, utterances in order
serial = core.GramAccumulator(P, Q)
for d, frames in utts:
    core.accumulate(serial, d, frames)

# four workers, same order enforced by the deterministic reduction
jobs = [lambda u=u: u for u in utts]
threaded = core.parallel_accumulate(jobs, P, Q, workers=4, deterministic=True)
print("deterministic 4-worker reduction bit-identical to serial:",
      serial.dtd.tobytes() == threaded.dtd.tobytes()
      and serial.dts.tobytes() == threaded.dts.tobytes())

# free-running reduction only agrees up to float reassociation
loose = core.parallel_accumulate(jobs, P, Q, workers=4, deterministic=False)
print("free-running reduction max deviation:",
      float(np.abs(loose.dts - serial.dts).max()))

# merging partial accumulators is associative (up to reassociation)
halves = []
for part in (utts[:100], utts[100:]):
    acc = core.GramAccumulator(P, Q)
    for d, frames in part:
        core.accumulate(acc, d, frames)
    halves.append(acc)
merged = core.merge(halves[0], halves[1])
print("merge(first half, second half) ~ single pass:",
      float(np.abs(merged.dts - serial.dts).max()) < 1e-10)

model = core.solve(serial)
print(f"solved model: basis {model.basis.shape}, bias {model.bias.shape}, "
      f"{serial.n_frames} frames accumulated")
