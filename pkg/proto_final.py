"""Final tuning grid: H=64 everywhere, higher gains, channel margins."""
import sys

sys.path.insert(0, "src")
import numpy as np, time
import spklearn.losses as L
import spklearn.network as N
import spklearn.sampling as S
import spklearn.synth as Y
import spklearn.evaluation as E
from spklearn.training import TrainRunConfig, train
from spklearn.sampling import MiningPolicy


def bands(train_idx, test, trials, H):
    means = {h: u.frames.mean(axis=0) for h, u in test.utterances.items()}
    ms = np.array([float(np.dot(means[t.handle_a], means[t.handle_b])
          / (np.linalg.norm(means[t.handle_a]) * np.linalg.norm(means[t.handle_b]))) for t in trials])
    targets = np.array([t.is_same for t in trials])
    raw = E.compute_eer(E.ScoredTrials(ms, targets)).eer
    inits = [E.evaluate(N.init_embedder(16, H, 64, seed=s), test, trials, 30).eer for s in range(5)]
    return raw, inits


CONFIGS = {
    "angular_prototypical": dict(objective="angular_prototypical"),
    "prototypical": dict(objective="prototypical"),
    "ge2e": dict(objective="ge2e"),
    "triplet": dict(objective="triplet",
                    mining=MiningPolicy(mode="hardest_fraction", fraction=0.01, activation_epoch=0)),
    "am_softmax": dict(objective="am_softmax", margin=0.2, scale=30.0),
}

for gain, ch_sd in [(3.5, 5.0), (3.5, 7.0), (4.0, 7.0)]:
    Y._GAIN_LOG_SD_RATIO = gain
    Y._CHANNEL_SD_RATIO = ch_sd
    Y._CHANNEL_MEAN_RATIO = 1.5
    spec = Y.SynthSpec(utterances_per_speaker=50)
    tr, te, trials = Y.generate(spec)
    raw, inits = bands(tr, te, trials, 64)
    print(f"gain={gain} ch={ch_sd}: raw={raw:.4f} init(H64) min={min(inits):.3f} {[f'{e:.3f}' for e in inits]}", flush=True)
    for name, kw in CONFIGS.items():
        seeds = (0, 1, 2) if name == "prototypical" else (0, 1)
        eers = []
        for s in seeds:
            cfg = TrainRunConfig(epochs=10_000, max_steps=2000, seed=s, hidden_dim=64,
                                 train_segment=30, **kw)
            res = train(cfg, tr)
            eers.append(E.evaluate(res.params, te, trials, crop_len=30).eer)
        print(f"    {name:22s}: {[f'{e:.4f}' for e in eers]} max={max(eers):.4f}", flush=True)
