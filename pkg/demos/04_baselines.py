"""Classical baselines next to the eta transform.

Per-utterance standardization removes each utterance's own first/second
moments; k-means quantization snaps frames to a shared codebook. Both are
cheap, neither is conditioned on a speaker embedding. This demo probes all
three on the same corpus.

Run: python3 demos/04_baselines.py
"""

import tempfile
from pathlib import Path

from etakit import baselines, core, datastore, probe
from etakit.synth import SynthSpec, generate

work = Path(tempfile.mkdtemp(prefix="etakit-demo4-"))
spec = SynthSpec(
    n_speakers=8, utts_per_speaker=20, frames_per_utt=50,
    q_dim=32, v_dim=16, p_true=5,
    content_sigma=1.0, noise_sigma=0.0, embed_jitter=0.01, seed=3,
)
manifest, _ = generate(spec, work / "corpus")
entries = sorted(datastore.load_manifest(manifest), key=lambda e: e.utt_id)
root = manifest.parent
frames_by_utt = {e.utt_id: datastore.load_frames(root, e) for e in entries}
embeddings = {e.utt_id: datastore.load_embedding(root, e) for e in entries}

# eta transform
p_dim = 6
pca = core.fit_pca(list(embeddings.values()), p_dim)
acc = core.GramAccumulator(p_dim, spec.q_dim)
for e in entries:
    core.accumulate(acc, core.project(pca, embeddings[e.utt_id]),
                    frames_by_utt[e.utt_id])
model = core.solve(acc)

# k-means codebook fitted on all frames
km = baselines.fit_kmeans(frames_by_utt.values(), c_count=64, rng_seed=0)
print(f"k-means: {km.c_count} centroids, inertia {km.inertia:.1f}")

variants = {
    "raw": lambda e: frames_by_utt[e.utt_id],
    "utterance-std": lambda e: baselines.utterance_standardize(frames_by_utt[e.utt_id]),
    "k-means": lambda e: baselines.quantize(km, frames_by_utt[e.utt_id]),
    "eta": lambda e: core.eta_transform(
        model, core.project(pca, embeddings[e.utt_id]), frames_by_utt[e.utt_id]
    ),
}

print(f"{'variant':<14} speaker-probe accuracy (lower = more speaker-independent)")
for name, transform in variants.items():
    rows = tuple(
        (e.utt_id, e.speaker_id, probe.pool_utterance(transform(e)))
        for e in entries
    )
    report = probe.run_probe(probe.ProbeDataset(rows=rows), k=5, seed=0)
    print(f"{name:<14} {100 * report.mean:6.2f}% ± {100 * report.std:.2f}")
print(f"(chance is {100 / spec.n_speakers:.1f}%)")
