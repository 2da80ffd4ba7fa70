"""Pilot for the end-to-end training criterion (dev only, not shipped)."""
import sys
import time
import numpy as np

sys.path.insert(0, "src")
from dtca.config import RunConfig
from dtca.training import build_model, Adam, train_run
from dtca.diffusion import make_schedule
from dtca.data import gen_synthetic, normalize, denormalize, persistence_forecast, save_sequence
from dtca.sampling import ensemble_forecast
from dtca.metrics import csi

def run_seed(seed, steps=2000, lr=1e-4, blob_kw=None, n_train=48, n_eval=8):
    cfg = RunConfig(patch=4, batch_size=4, timesteps=200, beta_end=0.05,
                    train_steps=steps, learning_rate=lr, seed=seed,
                    checkpoint_every=0, log_every=0)
    for k, v in (blob_kw or {}).items():
        setattr(cfg, k, v)
    params = cfg.blob_params()
    F = cfg.frames_cond + cfg.frames_pred
    train = np.stack([gen_synthetic(params, F, 16, 16, [seed, 2, i]).values
                      for i in range(n_train)])
    evals = np.stack([gen_synthetic(params, F, 16, 16, [seed, 9, i]).values
                      for i in range(n_eval)])

    import tempfile, pathlib
    from dtca.data import RadarSequence
    from dtca.training import restore
    with tempfile.TemporaryDirectory() as td:
        d = pathlib.Path(td) / "data"; d.mkdir()
        for i, v in enumerate(train):
            save_sequence(d / f"seq_{i:04d}.rseq", RadarSequence(v))
        t0 = time.time()
        res = train_run(cfg, d, pathlib.Path(td) / "out")
        t_train = time.time() - t0
        _, model, _, _ = restore(res.checkpoint_path)
    first = np.median(res.losses[:100]); last = np.median(res.losses[-100:])

    model_csis, pers_csis = [], []
    sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)
    t0 = time.time()
    for i, v in enumerate(evals):
        cond = v[:cfg.frames_cond]; truth = v[cfg.frames_cond:]
        members = ensemble_forecast(model, sched, normalize(cond, cfg.rain_cap),
                                    4, (seed, 3, i), steps=25)
        fc = denormalize(members, cfg.rain_cap).mean(axis=0)
        pers = persistence_forecast(cond, cfg.frames_pred)
        model_csis.append([csi(fc[l], truth[l], 1.0) for l in range(4)])
        pers_csis.append([csi(pers[l], truth[l], 1.0) for l in range(4)])
    t_sample = time.time() - t0
    m = np.mean(model_csis); p = np.mean(pers_csis)
    print(f"seed {seed}: loss {first:.3f}->{last:.3f} ({last/first:.2%}) "
          f"model CSI {m:.3f} vs pers {p:.3f} diff {m-p:+.3f} "
          f"per-lead model {np.mean(model_csis, axis=0).round(3)} "
          f"pers {np.mean(pers_csis, axis=0).round(3)} "
          f"[train {t_train:.0f}s sample {t_sample:.0f}s]", flush=True)
    return m - p, last / first

if __name__ == "__main__":
    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    diffs = []
    for seed in (11, 22, 33):
        d, ratio = run_seed(seed, steps=steps)
        diffs.append(d)
    print("median diff:", np.median(diffs))
