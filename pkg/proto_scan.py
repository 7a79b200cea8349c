"""Scan gain ratio + corpus size: trained EER vs random-init EER bands."""
import sys, time

sys.path.insert(0, "src")
import numpy as np

import spklearn.losses as L
import spklearn.network as N
import spklearn.sampling as S
import spklearn.synth as Y
import spklearn.evaluation as E


def run_training(train, test, trials, objective, steps_max=2000, epochs=400,
                 n_spk=30, m_utt=2, lr0=1e-3, seed=0):
    p = N.init_embedder(16, 64, 64, seed=seed)
    sim = L.AffineSimilarityParams()
    w_arr = np.array(sim.w); b_arr = np.array(sim.b)
    params = p.param_list()
    extra = [w_arr, b_arr] if objective in ("ge2e", "angular_prototypical") else []
    head = None
    if objective in ("am_softmax", "softmax"):
        order = train.speaker_order()
        cls = {s: i for i, s in enumerate(order)}
        head = L.ClassifierHead.initialize(len(order), 64, np.random.default_rng(seed + 1))
        extra = [head.weights, head.bias]
    opt = N.init_optimizer(params + extra, lr=lr0)
    mining = S.MiningPolicy(mode="random")
    cfg = L.MarginConfig(0.2, 30.0)
    norm_cache = {}
    def norm_utt(h):
        if h not in norm_cache:
            norm_cache[h] = N.instance_normalize(train.utterances[h])
        return norm_cache[h]
    step = 0
    for epoch in range(epochs):
        opt.lr = N.schedule_lr(epoch, lr0)
        plan = S.build_epoch_plan(train, cap=100, seed=S.derive_seed(seed, epoch))
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
                    embs[j, i], caches[j][i] = N.embed(norm_utt(h), p)
            batch = L.EmbeddingBatch(embs, skel.speaker_ids)
            if objective == "angular_prototypical":
                res = L.angular_prototypical_loss(batch, sim)
            elif objective == "ge2e":
                res = L.ge2e_loss(batch, sim)
            elif objective == "prototypical":
                res = L.prototypical_loss(batch)
            elif objective == "triplet":
                res = L.triplet_loss(batch, 0.2, mining, epoch=epoch,
                                     seed=S.derive_seed(seed, epoch, bi, 7))
            elif objective == "am_softmax":
                y = np.array([cls[s] for s in skel.speaker_ids])
                res = L.am_softmax_loss(batch, y, head, cfg)
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
                sim.w = max(float(w_arr), 1e-6); w_arr[...] = sim.w
                sim.b = float(b_arr)
            step += 1
        if step >= steps_max:
            break
    rep = E.evaluate(p, test, trials, crop_len=30)
    return rep.eer, step


for ratio in (1.5, 1.75, 2.0):
    for ups in (10, 20):
        Y._GAIN_LOG_SD_RATIO = ratio
        spec = Y.SynthSpec(utterances_per_speaker=ups)
        train, test, trials = Y.generate(spec)
        means = {h: u.frames.mean(axis=0) for h, u in test.utterances.items()}
        ms = np.array([
            float(np.dot(means[t.handle_a], means[t.handle_b])
                  / (np.linalg.norm(means[t.handle_a]) * np.linalg.norm(means[t.handle_b])))
            for t in trials
        ])
        targets = np.array([t.is_same for t in trials])
        raw = E.compute_eer(E.ScoredTrials(ms, targets)).eer
        inits = [E.evaluate(N.init_embedder(16, 64, 64, seed=s), test, trials, 30).eer
                 for s in range(3)]
        t0 = time.time()
        eer, steps = run_training(train, test, trials, "angular_prototypical")
        print(f"ratio={ratio} ups={ups}: raw={raw:.4f} init={[f'{e:.3f}' for e in inits]} "
              f"trained={eer:.4f} (steps={steps}, {time.time()-t0:.0f}s)")
