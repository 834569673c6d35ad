"""The offline training loop: flow-BC, TD critics and one-step distillation per batch."""

from __future__ import annotations

import contextlib
import csv
import os
from dataclasses import dataclass, replace

import numpy as np

from ..critic import CriticEnsemble, critic_loss, q_tot
from ..distill import OneStepPolicySet, actor_loss, deployed_actions, distill_loss, policy_outputs, verify_bounds
from ..envs import (
    OfflineDataset,
    gen_landmark_dataset,
    gen_payoff_dataset,
    gen_pure_coordination_dataset,
    gen_xor_dataset,
    load_dataset,
    make_env,
    save_dataset,
)
from ..flow import JointFlowPolicy, decode_discrete, euler_sample, flow_bc_loss, sample_noise
from ..metrics import FlowActor, MetricReport, OneStepActor, evaluate_return, pairwise_agent_mi
from ..nn import AdamState, adam_init, adam_step, save_checkpoint, value_and_grad
from .config import ExperimentConfig, default_out_root

METRICS_HEADER = ("step", "metric_name", "value", "aux")
BOUNDS_HEADER = (
    "step",
    "distill_loss",
    "w2_exact",
    "coupling_rms",
    "L_hat",
    "value_gap",
    "bound",
    "holds",
    "w2_holds",
    "gap_holds",
)


class TrainingAborted(RuntimeError):
    """A loss or gradient went non-finite; the last good checkpoint is kept."""


@dataclass(frozen=True)
class TrainState:
    flow: JointFlowPolicy
    policies: OneStepPolicySet
    critics: CriticEnsemble
    flow_opt: AdamState
    actor_opt: AdamState
    critic_opt: AdamState
    step: int = 0


@dataclass
class RunArtifacts:
    run_dir: str
    config_path: str
    metrics_csv: str
    bounds_csv: str
    checkpoint: str
    dataset_path: str
    state: TrainState
    dataset: OfflineDataset
    aborted: str | None = None


def fmt(x) -> str:
    """Shortest round-trip text for floats, so reruns compare byte for byte."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def stream_seeds(seed: int) -> dict[str, np.random.SeedSequence]:
    names = ("data", "init", "train", "eval")
    return dict(zip(names, np.random.SeedSequence(seed).spawn(len(names))))


def build_dataset(cfg: ExperimentConfig, rng: np.random.Generator) -> OfflineDataset:
    if cfg.dataset_path:
        return load_dataset(cfg.dataset_path)
    if cfg.env == "landmark":
        return gen_landmark_dataset(cfg.n_agents, cfg.episodes, rng, noise_std=cfg.noise_std, seed=cfg.seed)
    if cfg.env == "payoff_zeta":
        return gen_payoff_dataset(cfg.zeta, cfg.samples, rng, seed=cfg.seed)
    if cfg.env == "pure_coordination":
        return gen_pure_coordination_dataset(cfg.samples, cfg.epsilon_rare, rng, seed=cfg.seed)
    return gen_xor_dataset(cfg.samples, cfg.mode_std, rng, seed=cfg.seed)


def init_state(cfg: ExperimentConfig, dataset: OfflineDataset, rng: np.random.Generator) -> TrainState:
    space = dataset.action_space
    obs_dims = dataset.obs_dims
    hidden = tuple(cfg.hidden)
    flow = JointFlowPolicy.create(rng, obs_dims, space, hidden, cfg.flow_steps, cfg.layer_norm)
    policies = OneStepPolicySet.create(rng, obs_dims, space, hidden, cfg.alpha, cfg.layer_norm)
    if cfg.centralized_critic:
        c_obs, c_act = (sum(obs_dims),), (space.total_dim,)
    else:
        c_obs, c_act = obs_dims, space.dims
    critics = CriticEnsemble.create(rng, c_obs, c_act, hidden, cfg.gamma, cfg.tau, cfg.twin_reduction)
    return TrainState(
        flow,
        policies,
        critics,
        adam_init(flow.velocity, cfg.policy_lr, cfg.adam_eps),
        adam_init(policies.nets, cfg.policy_lr, cfg.adam_eps),
        adam_init(critics.online, cfg.value_lr, cfg.adam_eps),
    )


def _finite(name: str, value: float, step: int) -> float:
    if not np.isfinite(value):
        raise TrainingAborted(f"step {step}: {name} is not finite ({value})")
    return value


def train_step(state: TrainState, batch, cfg: ExperimentConfig, rng: np.random.Generator) -> tuple[TrainState, dict]:
    """One pass of the three updates on the same batch; each touches only its own parameters."""
    flow, policies, critics = state.flow, state.policies, state.critics
    flow_opt, actor_opt, critic_opt = state.flow_opt, state.actor_opt, state.critic_opt
    space = flow.action_space
    n = len(batch.obs)
    logs = {}
    step = state.step + 1

    if "flow" in cfg.parts:
        x0 = sample_noise(flow, n, rng)
        t = rng.uniform(0.0, 1.0, size=(n, 1))
        loss, g = value_and_grad(
            lambda v: flow_bc_loss(flow.with_velocity(v), batch.obs, batch.act, noise=x0, t=t), flow.velocity
        )
        logs["flow_bc_loss"] = _finite("flow_bc_loss", loss, step)
        new_v, flow_opt = _adam(flow.velocity, g, flow_opt, step)
        flow = flow.with_velocity(new_v)

    if "critic" in cfg.parts:
        next_act = euler_sample(flow, batch.next_obs, sample_noise(flow, n, rng))
        if space.discrete:
            next_act = deployed_actions(space, next_act)
        cbatch = batch
        if cfg.centralized_critic:
            cbatch = replace(batch, rew=batch.rew.mean(axis=1, keepdims=True))
        loss, g = value_and_grad(lambda on: critic_loss(critics, cbatch, next_act, nets=on), critics.online)
        logs["critic_loss"] = _finite("critic_loss", loss, step)
        new_on, critic_opt = _adam(critics.online, g, critic_opt, step)
        critics = critics.with_online(new_on)
        logs["mean_q"] = float(q_tot(critics, batch.obs, batch.act).data.mean())

    if "actor" in cfg.parts:
        z = sample_noise(flow, n, rng)
        target = euler_sample(flow, batch.obs, z)
        holder = {}

        def loss_fn(nets):
            r = actor_loss(
                policies,
                flow,
                critics,
                batch.obs,
                noise=z,
                flow_actions=target,
                nets=nets,
                q_weight=cfg.q_weight,
                normalize_q=cfg.normalize_q,
                discrete_q=cfg.discrete_q,
            )
            holder["r"] = r
            return r.loss

        _, g = value_and_grad(loss_fn, policies.nets)
        r = holder["r"]
        logs["distill_loss"] = _finite("distill_loss", r.distill_loss, step)
        logs["q_term"] = _finite("q_term", r.q_term, step)
        logs["actor_loss"] = _finite("actor_loss", r.total_actor_loss, step)
        new_nets, actor_opt = _adam(policies.nets, g, actor_opt, step)
        policies = policies.with_nets(new_nets)

    if "critic" in cfg.parts:
        critics = critics.update_targets()
    return TrainState(flow, policies, critics, flow_opt, actor_opt, critic_opt, step), logs


def _adam(params, grads, opt, step):
    try:
        return adam_step(params, grads, opt)
    except FloatingPointError as exc:
        raise TrainingAborted(f"step {step}: {exc}") from None


# ------------------------------------------------------------------ evaluation


@dataclass(frozen=True)
class EvalContext:
    bound_obs: np.ndarray
    mi_obs: np.ndarray
    distill_obs: np.ndarray
    env_descriptor: dict


def make_eval_context(cfg: ExperimentConfig, dataset: OfflineDataset, rng: np.random.Generator) -> EvalContext:
    obs = dataset.transitions().obs
    if cfg.eval_obs == "initial":
        obs = np.stack([traj.obs[0].reshape(-1) for traj in dataset.trajectories])
    uniq = np.unique(obs, axis=0)
    pool = uniq if len(uniq) < cfg.bound_obs else obs

    def pick(k):
        k = min(k, len(pool))
        return pool[np.sort(rng.choice(len(pool), size=k, replace=False))]

    distill_obs = obs[rng.integers(len(obs), size=256)]
    return EvalContext(pick(cfg.bound_obs), pick(cfg.mi_obs), distill_obs, dataset.env)


def sample_mi(state: TrainState, cfg: ExperimentConfig, obs_set, rng) -> tuple[float, float]:
    """Inter-agent MI of the joint and the factored policy at fixed joint observations."""
    space = state.flow.action_space
    joint, factored = [], []
    for o in obs_set:
        obs = np.repeat(o[None], cfg.mi_samples, axis=0)
        a_phi = euler_sample(state.flow, obs, sample_noise(state.flow, cfg.mi_samples, rng))
        a_w = policy_outputs(state.policies, obs, sample_noise(state.flow, cfg.mi_samples, rng)).data
        if space.discrete:
            a_phi, a_w = decode_discrete(a_phi, space), decode_discrete(a_w, space)
        joint.append(pairwise_agent_mi(a_phi, space.dims, cfg.mi_bins, space.discrete))
        factored.append(pairwise_agent_mi(a_w, space.dims, cfg.mi_bins, space.discrete))
    return float(np.mean(joint)), float(np.mean(factored))


def evaluate_checkpoint(state: TrainState, cfg: ExperimentConfig, ctx: EvalContext, rng) -> tuple[MetricReport, dict]:
    report = MetricReport(state.step)
    deploy = cfg.deploy_discrete and state.flow.action_space.discrete
    with_critic = "critic" in cfg.parts
    res = verify_bounds(
        state.policies,
        state.flow,
        state.critics if with_critic else None,
        ctx.bound_obs,
        cfg.bound_samples,
        rng,
        cfg.bound_tol,
        cfg.lipschitz_pairs,
        deploy,
    )
    d_loss = float(distill_loss(state.policies, state.flow, ctx.distill_obs, rng).data)
    aux = f"n={cfg.bound_samples};obs={len(ctx.bound_obs)}"
    report.add("w2_exact", res["w2_exact"], aux)
    report.add("coupling_rms", res["coupling_rms"], aux)
    if with_critic:
        report.add("value_gap", res["value_gap"], aux)
    mi_joint, mi_fact = sample_mi(state, cfg, ctx.mi_obs, rng)
    mi_aux = f"bins={cfg.mi_bins};n={cfg.mi_samples};obs={len(ctx.mi_obs)}"
    report.add("mi_joint", mi_joint, mi_aux)
    report.add("mi_factored", mi_fact, mi_aux)
    if cfg.eval_episodes > 0:
        env = make_env(ctx.env_descriptor)
        r_flow = evaluate_return(FlowActor(state.flow, cfg.temperature), env, cfg.eval_episodes, rng)
        r_one = evaluate_return(OneStepActor(state.policies, cfg.temperature), env, cfg.eval_episodes, rng)
        ep_aux = f"episodes={cfg.eval_episodes}"
        report.add("return_flow", r_flow, ep_aux)
        report.add("return_one_step", r_one, ep_aux)
        report.add("return_gap", abs(r_flow - r_one), ep_aux)
    nan = float("nan")
    w2_ok = res["prop1_holds"]
    gap_ok = res.get("prop2_holds", True)
    bounds = {
        "step": state.step,
        "distill_loss": d_loss,
        "w2_exact": res["w2_exact"],
        "coupling_rms": res["coupling_rms"],
        "L_hat": res.get("L_hat", nan),
        "value_gap": res.get("value_gap", nan),
        "bound": res.get("bound", nan),
        "holds": w2_ok and gap_ok,
        "w2_holds": w2_ok,
        "gap_holds": gap_ok,
    }
    return report, bounds


# ------------------------------------------------------------------ main loop


def checkpoint_nets(state: TrainState) -> dict:
    nets = {"flow.velocity": state.flow.velocity}
    for i, net in enumerate(state.policies.nets):
        nets[f"policy.{i:03d}"] = net
    for kind, group in (("online", state.critics.online), ("target", state.critics.target)):
        for i, pair in enumerate(group):
            for k, net in enumerate(pair):
                nets[f"critic.{kind}.{i:03d}.{k}"] = net
    return nets


def restore_state(nets: dict, meta: dict, cfg: ExperimentConfig) -> TrainState:
    """Rebuild policies and critics from a checkpoint (optimizer moments restart at zero)."""
    from ..flow import ActionSpace

    space = ActionSpace.from_dict(meta["action_space"])
    obs_dims = tuple(meta["obs_dims"])
    flow = JointFlowPolicy(nets["flow.velocity"], obs_dims, space, meta["flow_steps"])
    n_pol = sum(1 for k in nets if k.startswith("policy."))
    policies = OneStepPolicySet(tuple(nets[f"policy.{i:03d}"] for i in range(n_pol)), obs_dims, space, cfg.alpha)
    n_crit = sum(1 for k in nets if k.startswith("critic.online.") and k.endswith(".0"))
    group = {
        kind: tuple(tuple(nets[f"critic.{kind}.{i:03d}.{k}"] for k in range(2)) for i in range(n_crit))
        for kind in ("online", "target")
    }
    c_obs, c_act = (tuple(meta["critic_obs_dims"]), tuple(meta["critic_act_dims"]))
    critics = CriticEnsemble(group["online"], group["target"], c_obs, c_act, cfg.gamma, cfg.tau, cfg.twin_reduction)
    return TrainState(
        flow,
        policies,
        critics,
        adam_init(flow.velocity, cfg.policy_lr, cfg.adam_eps),
        adam_init(policies.nets, cfg.policy_lr, cfg.adam_eps),
        adam_init(critics.online, cfg.value_lr, cfg.adam_eps),
        int(meta["step"]),
    )


def write_checkpoint(path: str, state: TrainState, cfg: ExperimentConfig) -> None:
    meta = {
        "step": state.step,
        "seed": cfg.seed,
        "flow_steps": state.flow.flow_steps,
        "action_space": state.flow.action_space.to_dict(),
        "obs_dims": list(state.flow.obs_dims),
        "critic_obs_dims": list(state.critics.obs_dims),
        "critic_act_dims": list(state.critics.act_dims),
    }
    save_checkpoint(path, checkpoint_nets(state), meta)


@contextlib.contextmanager
def thread_limit(enabled: bool):
    """Pin BLAS to one thread so float reductions happen in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def resolve_run_dir(cfg: ExperimentConfig) -> str:
    if cfg.out_dir:
        return cfg.out_dir
    return os.path.join(default_out_root(), f"{cfg.env}_seed{cfg.seed}")


def train(cfg: ExperimentConfig, state: TrainState | None = None, raise_on_abort: bool = True) -> RunArtifacts:
    """Run the full loop, writing config, dataset, CSVs and checkpoints into the run directory."""
    run_dir = resolve_run_dir(cfg)
    os.makedirs(run_dir, exist_ok=True)
    seeds = stream_seeds(cfg.seed)
    config_path = os.path.join(run_dir, "config.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json() + "\n")

    with thread_limit(cfg.deterministic):
        dataset = build_dataset(cfg, np.random.default_rng(seeds["data"]))
        dataset_path = os.path.join(run_dir, "dataset.jsonl")
        if not cfg.dataset_path or os.path.abspath(cfg.dataset_path) != os.path.abspath(dataset_path):
            save_dataset(dataset, dataset_path)
        if state is None:
            state = init_state(cfg, dataset, np.random.default_rng(seeds["init"]))
        data = dataset.transitions()
        train_rng = np.random.default_rng(seeds["train"])
        ctx = make_eval_context(cfg, dataset, np.random.default_rng(seeds["eval"]))
        interval = cfg.resolved_eval_interval
        evaluate = "actor" in cfg.parts

        metrics_path = os.path.join(run_dir, "metrics.csv")
        bounds_path = os.path.join(run_dir, "bounds.csv")
        ckpt_path = os.path.join(run_dir, "checkpoint.ffck")
        aborted = None
        with open(metrics_path, "w", newline="", encoding="utf-8") as mf, open(
            bounds_path, "w", newline="", encoding="utf-8"
        ) as bf:
            mw, bw = csv.writer(mf), csv.writer(bf)
            mw.writerow(METRICS_HEADER)
            bw.writerow(BOUNDS_HEADER)

            def run_eval(st):
                eval_rng = np.random.default_rng([cfg.seed, st.step, 7])
                report, bounds = evaluate_checkpoint(st, cfg, ctx, eval_rng)
                for row in report.rows():
                    mw.writerow([fmt(v) for v in row])
                bw.writerow([fmt(bounds[k]) for k in BOUNDS_HEADER])

            if evaluate:
                run_eval(state)
            write_checkpoint(ckpt_path, state, cfg)
            for _ in range(cfg.steps):
                idx = train_rng.integers(len(data), size=cfg.batch_size)
                try:
                    new_state, logs = train_step(state, data.take(idx), cfg, train_rng)
                except TrainingAborted as exc:
                    aborted = str(exc)
                    break
                state = new_state
                for name in sorted(logs):
                    mw.writerow([state.step, name, fmt(logs[name]), ""])
                if state.step % interval == 0 or state.step == cfg.steps:
                    if evaluate:
                        run_eval(state)
                    write_checkpoint(ckpt_path, state, cfg)
        if aborted:
            with open(os.path.join(run_dir, "ABORTED"), "w", encoding="utf-8") as fh:
                fh.write(aborted + "\n")
    arts = RunArtifacts(run_dir, config_path, metrics_path, bounds_path, ckpt_path, dataset_path, state, dataset, aborted)
    if aborted and raise_on_abort:
        raise TrainingAborted(aborted)
    return arts


def read_metrics(path: str) -> dict[str, list[tuple[int, float]]]:
    """``{metric_name: [(step, value), ...]}`` from a metrics.csv file."""
    out: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["metric_name"], []).append((int(row["step"]), float(row["value"])))
    return out


def read_bounds(path: str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in r:
            r[k] = int(r[k]) if k in ("step", "holds", "w2_holds", "gap_holds") else float(r[k])
    return rows
