"""Scratch prototype: criterion-6 feasibility for the synthetic benchmark."""
import sys, time

sys.path.insert(0, "src")
import numpy as np

import spklearn.losses as L
import spklearn.network as N
import spklearn.sampling as S
import spklearn.synth as Y
import spklearn.evaluation as E

spec = Y.SynthSpec()
train, test, trials = Y.generate(spec)
print(f"corpus: {train.num_speakers} train spk, {test.num_speakers} test spk, {len(trials)} trials")

# 1. raw temporal-mean cosine scoring (no embedder, no MVN)
means = {h: u.frames.mean(axis=0) for h, u in test.utterances.items()}
scores = np.array([
    float(np.dot(means[t.handle_a], means[t.handle_b])
          / (np.linalg.norm(means[t.handle_a]) * np.linalg.norm(means[t.handle_b])))
    for t in trials
])
targets = np.array([t.is_same for t in trials])
rep = E.compute_eer(E.ScoredTrials(scores, targets))
print(f"raw-mean EER: {rep.eer:.4f}")

# 2. random-init embedder EER (with MVN), 5 seeds
for seed in range(5):
    p = N.init_embedder(16, 64, 64, seed=seed)
    rep0 = E.evaluate(p, test, trials, crop_len=30)
    print(f"random-init seed {seed}: EER {rep0.eer:.4f}")

# 3. crude training loop: angular prototypical, N=30, M=2
def run_training(objective, steps_max=2000, epochs=60, n_spk=30, m_utt=2, lr0=1e-3, seed=0):
    p = N.init_embedder(16, 64, 64, seed=seed)
    sim = L.AffineSimilarityParams()
    w_arr = np.array(sim.w)
    b_arr = np.array(sim.b)
    head = None
    params = p.param_list()
    extra = []
    if objective in ("ge2e", "angular_prototypical"):
        extra = [w_arr, b_arr]
    if objective in ("am_softmax", "softmax"):
        order = train.speaker_order()
        cls = {s: i for i, s in enumerate(order)}
        head = L.ClassifierHead.initialize(len(order), 64, np.random.default_rng(seed + 1))
        extra = [head.weights, head.bias]
    opt = N.init_optimizer(params + extra, lr=lr0)
    mining = S.MiningPolicy(mode="random")
    cfg = L.MarginConfig(0.2, 30.0)

    norm_cache = {}
    def norm_utt(h, idx):
        if h not in norm_cache:
            norm_cache[h] = N.instance_normalize(idx.utterances[h])
        return norm_cache[h]

    step = 0
    t0 = time.time()
    for epoch in range(epochs):
        opt.lr = N.schedule_lr(epoch, lr0)
        plan = S.build_epoch_plan(train, cap=100, seed=S.derive_seed(seed, epoch))
        losses_ep = []
        bi = 0
        while step < steps_max:
            try:
                mm = 1 if objective in ("softmax", "am_softmax") else m_utt
                skel = S.make_episodic_batch(plan, n_spk, mm, S.derive_seed(seed, epoch, bi))
            except S.EpochExhausted:
                break
            bi += 1
            embs = np.zeros((n_spk, mm, 64))
            caches = [[None] * mm for _ in range(n_spk)]
            for j, row in enumerate(skel.handles):
                for i, h in enumerate(row):
                    embs[j, i], caches[j][i] = N.embed(norm_utt(h, train), p)
            batch = L.EmbeddingBatch(embs, skel.speaker_ids)
            if objective == "angular_prototypical":
                res = L.angular_prototypical_loss(batch, sim)
            elif objective == "ge2e":
                res = L.ge2e_loss(batch, sim)
            elif objective == "prototypical":
                res = L.prototypical_loss(batch)
            elif objective == "triplet":
                res = L.triplet_loss(batch, 0.2, mining, epoch=epoch, seed=S.derive_seed(seed, epoch, bi, 7))
            elif objective == "am_softmax":
                y = np.array([cls[s] for s in skel.speaker_ids])
                res = L.am_softmax_loss(batch, y, head, cfg)
            elif objective == "softmax":
                y = np.array([cls[s] for s in skel.speaker_ids])
                res = L.softmax_loss(batch, y, head)
            losses_ep.append(res.loss)
            g = N.EmbedderGrads.zeros_like(p)
            for j in range(n_spk):
                for i in range(mm):
                    gj, _ = N.backward(res.grad_embeddings[j, i], caches[j][i])
                    g.add_(gj)
            glist = g.param_list()
            if objective in ("ge2e", "angular_prototypical"):
                glist = glist + [np.array(res.grad_w), np.array(res.grad_b)]
            elif head is not None:
                glist = glist + [res.grad_weights, res.grad_bias]
            N.adam_step(opt, params + extra, glist)
            p.revision += 1
            if objective in ("ge2e", "angular_prototypical"):
                sim.w = max(float(w_arr), 1e-6)
                w_arr[...] = sim.w
                sim.b = float(b_arr)
            step += 1
        if step >= steps_max:
            break
    rep = E.evaluate(p, test, trials, crop_len=30)
    dt = time.time() - t0
    print(f"{objective:22s} steps={step:4d} ep_loss={np.mean(losses_ep):.4f} "
          f"EER={rep.eer:.4f} ({dt:.1f}s)")
    return rep.eer

for obj in ("angular_prototypical", "prototypical", "ge2e", "triplet", "am_softmax"):
    run_training(obj)
