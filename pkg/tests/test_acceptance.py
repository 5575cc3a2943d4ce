"""End-to-end acceptance checks. Each test prints one PASS/FAIL line, also listed in the terminal summary."""
import filecmp
import time

import numpy as np
import pytest
import yaml

import conftest
import reference_env
from semmec.baselines import LocalOffloader, brute_force_best, build_action_table, joint_value, random_feasible_values
from semmec.cli import main
from semmec.config import WEIGHT_PRESETS, EnvConfig
from semmec.d3qn import D3QNOffloader
from semmec.env import OffloadingEnv
from semmec.evaluation import evaluate_policy
from semmec.harness import ExperimentSpec, convergence_episode, mann_kendall, run_experiment
from semmec.mappo import MAPPOOffloader, PpoHyper, assemble_batch, build_networks, collect_rollout, compute_gae, ppo_loss
from semmec.accuracy import profile_from_config

pytestmark = pytest.mark.acceptance

EVAL_RUNS = 200


def report(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def random_config(rng, **fixed):
    w = rng.dirichlet(np.ones(3))
    kw = dict(
        n_ues=int(rng.integers(1, 9)),
        k_channels=int(rng.integers(1, 7)),
        queue_len=int(rng.integers(1, 25)),
        bandwidth=float(rng.uniform(1e6, 2e7)),
        noise_mw=float(rng.uniform(0.1, 10.0)),
        weights=tuple(float(x) for x in w / w.sum()),
        mu_min=float(rng.uniform(0.05, 0.9)),
        task_mix=tuple(float(x) for x in rng.dirichlet(np.ones(3))),
        violation_mode=str(rng.choice(["sum", "first"])),
        es_energy_attribution=str(rng.choice(["proportional", "full"])),
        t_max=float(rng.uniform(1e-3, 2e-2)),
        e_max=float(rng.uniform(0.01, 0.5)),
        seed=int(rng.integers(1 << 30)),
    )
    kw.update(fixed)
    return EnvConfig(**kw)


# ---------------------------------------------------------------- 1


def test_local_policy_scores_exactly_half():
    rng = np.random.default_rng(2024)
    worst_err, worst_time = 0.0, 0.0
    for _ in range(25):
        cfg = random_config(rng)
        start = time.perf_counter()
        res = evaluate_policy(LocalOffloader(), cfg, runs=EVAL_RUNS, seed=cfg.seed)
        worst_time = max(worst_time, time.perf_counter() - start)
        worst_err = max(worst_err, abs(res["qoe"] - 0.5), float(np.max(np.abs(np.array(res["qoe_per_agent"]) - 0.5))))
    ok = worst_err <= 1e-9 and worst_time < 1.0
    report(1, "local QoE = 0.5", ok, f"max |QoE-0.5| = {worst_err:.2e} over 25 configs, slowest {worst_time:.3f}s")


# ---------------------------------------------------------------- 2


def test_semantic_awareness_gain(mappo_pairs):
    cfg = EnvConfig()
    gains, aware_q, unaware_q = [], [], []
    for seed, pair in sorted(mappo_pairs.items()):
        a = evaluate_policy(pair["aware"], cfg, runs=EVAL_RUNS, seed=cfg.seed)["qoe"]
        u = evaluate_policy(pair["unaware"], cfg, runs=EVAL_RUNS, seed=cfg.seed)["qoe"]
        aware_q.append(a)
        unaware_q.append(u)
        gains.append(a / u - 1.0)
    mean_gain = np.mean(aware_q) / np.mean(unaware_q) - 1.0
    ok = mean_gain >= 0.05 and all(g > 0 for g in gains)
    detail = f"aware {np.mean(aware_q):.4f} vs unaware {np.mean(unaware_q):.4f}, gain {100 * mean_gain:.2f}% " + (
        f"(per seed {', '.join(f'{100 * g:.2f}%' for g in gains)})"
    )
    report(2, "semantic-aware MAPPO beats mu=1 MAPPO by >= 5%", ok, detail)


# ---------------------------------------------------------------- 3


def test_convergence_speed(mappo_pairs):
    cfg = EnvConfig()
    mappo_ep, d3qn_ep = [], []
    for seed, pair in sorted(mappo_pairs.items()):
        mappo_ep.append(convergence_episode([r["mean_reward"] for r in pair["aware"].log_]))
        d3 = D3QNOffloader(random_state=seed).fit(cfg)
        d3qn_ep.append(convergence_episode([r["mean_reward"] for r in d3.log_]))
    ok_mappo = all(e <= 150 for e in mappo_ep)
    ok_ratio = np.mean(d3qn_ep) > 3 * np.mean(mappo_ep)
    detail = f"MAPPO episodes {mappo_ep} (limit 150), D3QN episodes {d3qn_ep}, ratio {np.mean(d3qn_ep) / np.mean(mappo_ep):.2f} (need > 3)"
    report(3, "MAPPO converges by 150 and D3QN takes > 3x longer", ok_mappo and ok_ratio, detail)


# ---------------------------------------------------------------- 4


def test_oracle_dominance():
    start = time.perf_counter()
    cfg = EnvConfig(n_ues=2, k_channels=2)
    policy = MAPPOOffloader(random_state=0).fit(cfg)
    table = build_action_table(cfg)
    profile = profile_from_config(cfg)
    env = OffloadingEnv(cfg, profile)
    worst_gap, worst_random = np.inf, np.inf
    for i in range(50):
        obs = env.reset(np.random.SeedSequence(i, spawn_key=(99,)))
        inst = env.frozen()
        best = brute_force_best(inst, table=table, profile=profile)
        mine = joint_value(inst, policy.act(obs, cfg), profile=profile)
        rand = random_feasible_values(inst, table, 10_000, i, profile=profile)
        worst_gap = min(worst_gap, best.value - (mine - 0.02))
        if rand.size:
            worst_random = min(worst_random, best.value - rand.max())
    elapsed = time.perf_counter() - start
    ok = worst_gap >= 0 and worst_random >= 0 and elapsed < 300
    detail = (
        f"min(oracle - policy + 0.02) = {worst_gap:.4f}, min(oracle - best random) = {worst_random:.4f}, "
        f"{elapsed:.0f}s including training"
    )
    report(4, "brute-force oracle dominates policy and random search", ok, detail)


# ---------------------------------------------------------------- 5


def test_independent_evaluator_agrees():
    rng = np.random.default_rng(77)
    worst = 0.0
    pairs = 0
    while pairs < 1000:
        cfg = random_config(rng, n_ues=int(rng.integers(1, 7)), queue_len=3)
        profile = profile_from_config(cfg)
        env = OffloadingEnv(cfg, profile)
        env.reset(int(rng.integers(1 << 30)))
        for t in range(cfg.queue_len):
            inst = env.frozen(t)
            n, k = cfg.n_ues, cfg.k_channels
            rho = rng.integers(0, 2, n)
            p = rng.uniform(*cfg.p_range_mw, n)
            f = rng.uniform(*cfg.f_range, n)
            mu = np.where(rng.random(n) < 0.2, 1.0, rng.uniform(cfg.mu_min, 1.0, n))
            ch = rng.integers(0, k, n)
            got = inst.evaluate((rho, p, f, mu, ch), profile=profile)
            gains = inst.gains.tolist()
            tasks = [int(x) for x in inst.task_types]
            acts = [(int(rho[i]), float(p[i]), float(f[i]), float(mu[i]), int(ch[i])) for i in range(n)]
            want = reference_env.step(cfg, gains, tasks, acts)
            for i in range(n):
                for key in ("latency", "energy", "accuracy", "qoe", "reward"):
                    a, b = float(got[key][i]), want[i][key]
                    worst = max(worst, abs(a - b) / max(abs(b), 1e-12))
            pairs += 1
    report(5, "independent scalar evaluator agrees", worst <= 1e-9, f"max relative deviation {worst:.2e} over {pairs} pairs")


# ---------------------------------------------------------------- 6


def _fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        g[i] = (f(up) - f(down)) / (2 * h)
    return g


def _rel(a, b, floor=1e-7):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def test_gradients_gae_and_ratio():
    cfg = EnvConfig(n_ues=2, k_channels=2, queue_len=4)
    head, actor, critic = build_networks(cfg, (6,), True, np.random.default_rng(5))
    profile = profile_from_config(cfg)
    sizes = (actor.sizes, critic.sizes)
    hyper = PpoHyper()
    trajs = [
        collect_rollout(actor.params, critic.params, head, sizes, cfg, profile, np.random.SeedSequence(5, spawn_key=(1, 0, w)))
        for w in range(2)
    ]
    batch = assemble_batch(trajs, hyper)

    (_, _, _, _, ratio), _, _ = ppo_loss(actor, critic, head, batch, hyper, with_grad=True)
    ratio_dev = float(np.max(np.abs(ratio - 1.0)))

    # move away from the sampling point so the clip and the ratio both matter
    actor.params = actor.params + np.random.default_rng(6).normal(scale=0.05, size=actor.n_params)
    (_, _, _, _, ratio2), g_actor, g_critic = ppo_loss(actor, critic, head, batch, hyper, with_grad=True)
    base_a, base_c = actor.params.copy(), critic.params.copy()

    def actor_obj(theta):
        actor.params = theta
        surrogate, _, entropy, _, _ = ppo_loss(actor, critic, head, batch, hyper)
        actor.params = base_a
        return surrogate + hyper.entropy_coef * entropy

    def critic_obj(phi):
        critic.params = phi
        _, loss, _, _, _ = ppo_loss(actor, critic, head, batch, hyper)
        critic.params = base_c
        return hyper.critic_coef * loss

    err_a = _rel(g_actor, _fd(actor_obj, base_a.copy()))
    err_c = _rel(g_critic, _fd(critic_obj, base_c.copy()))

    rng = np.random.default_rng(8)
    r, v = rng.normal(size=50), np.append(rng.normal(size=50), 0.0)
    mc = np.array([sum(0.99 ** (j - t) * r[j] for j in range(t, 50)) for t in range(50)]) - v[:-1]
    gae_err = float(np.max(np.abs(compute_gae(r, v, 0.99, 1.0) - mc)))

    clipped = int(np.sum(np.abs(ratio2 - 1) > hyper.clip_eps))
    ok = err_a <= 1e-4 and err_c <= 1e-4 and gae_err <= 1e-10 and ratio_dev == 0.0
    detail = (
        f"actor rel err {err_a:.1e} ({actor.n_params} params, {clipped} clipped samples), critic rel err {err_c:.1e} "
        f"({critic.n_params} params), GAE dev {gae_err:.1e}, |ratio-1| at theta=theta' {ratio_dev:.1e}"
    )
    report(6, "gradient, GAE and ratio checks", ok, detail)


# ---------------------------------------------------------------- 7


def test_preference_orderings():
    res = {}
    for name, w in WEIGHT_PRESETS.items():
        cfg = EnvConfig(weights=w)
        model = MAPPOOffloader(random_state=0).fit(cfg)
        res[name] = evaluate_policy(model, cfg, runs=EVAL_RUNS, seed=cfg.seed)
    lat = {k: v["latency"] for k, v in res.items()}
    eng = {k: v["energy"] for k, v in res.items()}
    acc = {k: v["accuracy"] for k, v in res.items()}
    ok = min(lat, key=lat.get) == "delay" and min(eng, key=eng.get) == "energy" and max(acc, key=acc.get) == "accuracy"
    fmt = lambda d, s: ", ".join(f"{k} {v * s:.3f}" for k, v in d.items())  # noqa: E731
    detail = f"latency ms [{fmt(lat, 1e3)}]; energy mJ [{fmt(eng, 1e3)}]; accuracy [{fmt(acc, 1)}]"
    report(7, "preset orderings", ok, detail)


# ---------------------------------------------------------------- 8


def test_monotone_sweeps(mappo_pairs):
    base = EnvConfig()
    models = {("mappo", 0, None): mappo_pairs[0]["aware"]}
    sweeps = {
        "noise": (0.5, 1.0, 2.0, 4.0, 8.0),
        "n_users": (4, 5, 6, 7, 8),
    }
    parts, ok = [], True
    for axis, values in sweeps.items():
        spec = ExperimentSpec(env=base, axis=axis, values=values, methods=("mappo",), seeds=(0,), eval_runs=EVAL_RUNS)
        result = run_experiment(spec, models=models)
        qoe = [r["qoe"] for r in result.rows]
        s, _, p = mann_kendall(qoe)
        ok &= result.failures == 0 and p < 0.05
        parts.append(f"{axis}: QoE {' '.join(f'{q:.4f}' for q in qoe)}, S={s}, p={p:.4f}")
    report(8, "QoE decreases in noise power and user count (K=4)", ok, "; ".join(parts))


# ---------------------------------------------------------------- 9


def _run_all(out, cfg_path):
    codes = [
        main(["sweep", "--config", str(cfg_path), "--out", str(out / "sweep")]),
        main(["train", "--config", str(cfg_path), "--out", str(out / "train")]),
        main(["eval", "--checkpoint", str(out / "train" / "model.npz"), "--runs", "20", "--out", str(out / "eval")]),
        main(["freeze", "--config", str(cfg_path), "--seed", "1", "--out", str(out / "inst.json")]),
        main(["oracle", "--instance", str(out / "inst.json"), "--out", str(out / "best.json")]),
    ]
    return codes


def _files(root):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file())


def test_cli_outputs_are_byte_identical(tmp_path):
    cfg = {
        "env": {"n_ues": 2, "k_channels": 2, "queue_len": 6},
        "experiment": {
            "axis": "noise",
            "values": [1.0, 4.0],
            "methods": ["local", "mappo", "mappo_unaware", "mappo_forced_mu1", "d3qn"],
            "seeds": [0, 1],
            "eval_runs": 20,
        },
        "train": {"mappo": {"episodes": 5}, "d3qn": {"episodes": 20, "warmup": 50}},
    }
    cfg_path = tmp_path / "exp.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    a, b = tmp_path / "a", tmp_path / "b"
    codes = _run_all(a, cfg_path) + _run_all(b, cfg_path)
    files = _files(a)
    same = files == _files(b) and all(filecmp.cmp(a / f, b / f, shallow=False) for f in files)
    csvs = [f for f in files if f.suffix == ".csv"]
    ok = same and set(codes) == {0} and len(csvs) > 0
    report(9, "CLI outputs byte-identical across runs", ok, f"{len(files)} files ({len(csvs)} CSV) compared, exit codes {codes[:5]}")
