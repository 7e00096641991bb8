"""Build experiments from a config and write run artifacts.

The runner materializes the dataset and model, dispatches the configured
protocol, and renders the four run artifacts (history.csv, ledger.csv,
summary.json, model.ckpt).  Artifact writing is atomic: everything is
rendered in memory, written to temporary names, and renamed into place, so a
failed run leaves no partial outputs behind.
"""

from __future__ import annotations

import json
import os
from typing import Dict

from .config import ExperimentConfig
from .errors import ConfigError
from .fed_data import FederatedDataset, generate_synthetic
from .models import LayeredModel, build_mlp, checkpoint_bytes, freeze_layers, lora_attach, lora_merge
from .optim import OptimizerConfig, ShampooConfig
from .protocols import (
    DpConfig,
    RunResult,
    history_to_csv,
    run_dp_clgecl,
    run_fedavg,
    run_fedshampoo,
    run_fl_group_dp,
)
from .wire import (
    FULL_PRECISION_BITS,
    NF4_BITS,
    CommLedger,
    bytes_to_gb,
    payload_bytes,
)

ARTIFACT_NAMES = ("history.csv", "ledger.csv", "summary.json", "model.ckpt")


def build_dataset(cfg: ExperimentConfig) -> FederatedDataset:
    d = cfg.dataset
    providers = d.providers_per_client
    if isinstance(providers, tuple):
        providers = list(providers)
    records = d.records_per_provider
    if isinstance(records, tuple):
        records = (records[0], records[1])
    return generate_synthetic(
        n_clients=d.n_clients,
        providers_per_client=providers,
        records_per_provider=records,
        feature_dim=d.feature_dim,
        n_classes=d.n_classes,
        heterogeneity=d.heterogeneity,
        seed=cfg.experiment.seed,
        validation_size=d.validation_size,
        unseen_provider_fraction=d.unseen_provider_fraction,
        feature_noise=d.feature_noise,
        class_separation=d.class_separation,
        conditioning=d.conditioning,
    )


def build_model(cfg: ExperimentConfig) -> LayeredModel:
    model = build_mlp(
        feature_dim=cfg.dataset.feature_dim,
        hidden=cfg.model.hidden,
        n_classes=cfg.dataset.n_classes,
        activation=cfg.model.activation,
        seed=cfg.experiment.seed,
    )
    if cfg.model.frozen_layers:
        freeze_layers(model, cfg.model.frozen_layers)
    if cfg.lora.rank > 0:
        lora_attach(
            model,
            cfg.lora.targets,
            cfg.lora.rank,
            scaling=cfg.lora.scaling if cfg.lora.scaling > 0 else None,
            seed=cfg.experiment.seed,
            init_std=cfg.lora.init_std,
        )
    return model


def _optimizer_config(cfg: ExperimentConfig) -> OptimizerConfig:
    o = cfg.optimizer
    return OptimizerConfig(
        kind=o.kind,
        lr=o.lr,
        momentum=o.momentum,
        betas=o.betas,
        eps=o.eps,
        weight_decay=o.weight_decay,
    )


def _dp_config(cfg: ExperimentConfig) -> DpConfig:
    d = cfg.dp
    return DpConfig(
        clip_norm=d.clip_norm,
        providers_per_round=d.providers_per_round,
        noise_multiplier=d.noise_multiplier,
        target_epsilon=d.target_epsilon,
        delta=d.delta,
        provider_sampling=d.provider_sampling,
    )


def execute(cfg: ExperimentConfig) -> RunResult:
    """Run the configured experiment end to end."""
    cfg.validate()
    ds = build_dataset(cfg)
    model = build_model(cfg)
    ledger = CommLedger()
    exp = cfg.experiment
    common = dict(seed=exp.seed, ledger=ledger, quantize=cfg.wire.quantize, jobs=exp.jobs)
    if exp.protocol == "fedavg":
        if exp.clients_per_round is None:
            raise ConfigError("fedavg needs [experiment] clients_per_round")
        return run_fedavg(
            ds,
            model,
            rounds=exp.rounds,
            clients_per_round=exp.clients_per_round,
            local_epochs=cfg.local.epochs,
            optimizer=_optimizer_config(cfg),
            batch_size=cfg.local.batch_size,
            **common,
        )
    if exp.protocol == "fedshampoo":
        if exp.clients_per_round is None:
            raise ConfigError("fedshampoo needs [experiment] clients_per_round")
        s = cfg.shampoo
        return run_fedshampoo(
            ds,
            model,
            rounds=exp.rounds,
            clients_per_round=exp.clients_per_round,
            inner_steps=s.inner_steps,
            lr=s.lr,
            clip_value=s.clip,
            batch_size=cfg.local.batch_size,
            shampoo=ShampooConfig(
                ridge=s.ridge, stat_interval=s.stat_interval, precond_interval=s.precond_interval
            ),
            **common,
        )
    if exp.protocol == "fl-group-dp":
        return run_fl_group_dp(
            ds,
            model,
            rounds=exp.rounds,
            clients_per_round=exp.clients_per_round,
            client_prob=exp.client_prob,
            dp=_dp_config(cfg),
            optimizer=_optimizer_config(cfg),
            t_gd=cfg.local.t_gd,
            **common,
        )
    if exp.protocol == "dp-clgecl":
        return run_dp_clgecl(
            ds,
            model,
            rounds=exp.rounds,
            clients_per_round=exp.clients_per_round,
            client_prob=exp.client_prob,
            dp=_dp_config(cfg),
            local_optimizer=cfg.optimizer.kind,
            lr=cfg.optimizer.lr,
            momentum=cfg.optimizer.momentum,
            t_gd=cfg.local.t_gd,
            lambda_init_scale=cfg.dp.lambda_init_scale,
            **common,
        )
    raise ConfigError(f"unknown protocol {exp.protocol!r}")


def projected_plan(cfg: ExperimentConfig) -> Dict:
    """Message-size plan without training.

    Builds the model (for the trainable count) and replays the round
    sampling streams, so for any configuration whose payload does not adapt
    during training the projected totals equal the post-run ledger exactly.
    """
    cfg.validate()
    model = build_model(cfg)
    count = model.trainable_parameter_count()
    bits = NF4_BITS if cfg.wire.quantize else FULL_PRECISION_BITS
    per_message = payload_bytes(((count, bits),))
    exp = cfg.experiment
    per_round = []
    for r in range(1, exp.rounds + 1):
        if exp.clients_per_round is not None:
            sampled = exp.clients_per_round
        else:
            # Replay the exact Bernoulli participation streams.
            from .rng import stream

            sampled = sum(
                stream(exp.seed, "round", r, "client", k, "participate").random()
                < exp.client_prob
                for k in range(cfg.dataset.n_clients)
            )
        per_round.append({"round": r, "clients": int(sampled), "bytes": 2 * sampled * per_message})
    total = sum(p["bytes"] for p in per_round)
    return {
        "trainable_parameters": count,
        "bits_per_parameter": bits,
        "message_bytes": per_message,
        "messages": sum(2 * p["clients"] for p in per_round),
        "per_round": per_round,
        "bytes_total": total,
        "gigabytes": bytes_to_gb(total, cfg.wire.gb_convention),
        "gb_convention": cfg.wire.gb_convention,
    }


def summarize(cfg: ExperimentConfig, result: RunResult) -> Dict:
    """The summary.json payload for a finished run."""
    final = result.final
    summary = {
        "protocol": cfg.experiment.protocol,
        "seed": cfg.experiment.seed,
        "rounds": cfg.experiment.rounds,
        "final_loss": final.loss,
        "final_accuracy": final.accuracy,
        "final_anls": final.anls,
        "trainable_parameters": result.info.get("trainable_parameters"),
        "messages": len(result.ledger),
        "bytes_total": result.ledger.total_bytes(),
        "gigabytes": result.ledger.total_gb(cfg.wire.gb_convention),
        "gb_convention": cfg.wire.gb_convention,
        "privacy": None,
    }
    if result.privacy is not None:
        summary["privacy"] = {
            "epsilon": result.privacy.epsilon,
            "delta": result.privacy.delta,
            "best_alpha": result.privacy.best_alpha,
            "noise_multiplier": result.info.get("noise_multiplier"),
            "q": result.info.get("q"),
            "steps": result.info.get("steps"),
            "clip_norm": result.info.get("clip_norm"),
        }
    return summary


def render_artifacts(cfg: ExperimentConfig, result: RunResult) -> Dict[str, bytes]:
    model = result.model
    if model.adapters:
        model = lora_merge(model)
    summary = json.dumps(summarize(cfg, result), sort_keys=True, indent=2) + "\n"
    return {
        "history.csv": history_to_csv(result.history).encode(),
        "ledger.csv": result.ledger.to_csv().encode(),
        "summary.json": summary.encode(),
        "model.ckpt": checkpoint_bytes(model),
    }


def write_artifacts(artifacts: Dict[str, bytes], out_dir) -> None:
    """Write every artifact or none: temp files first, then atomic renames."""
    os.makedirs(out_dir, exist_ok=True)
    temps = []
    try:
        for name, data in artifacts.items():
            tmp = os.path.join(out_dir, f".{name}.tmp-{os.getpid()}")
            with open(tmp, "wb") as fh:
                fh.write(data)
            temps.append((tmp, os.path.join(out_dir, name)))
        for tmp, dest in temps:
            os.replace(tmp, dest)
    except BaseException:
        for tmp, _ in temps:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise


def run_experiment(cfg: ExperimentConfig, out_dir) -> Dict:
    """Execute a config and write all four artifacts; returns the summary."""
    result = execute(cfg)
    artifacts = render_artifacts(cfg, result)
    write_artifacts(artifacts, out_dir)
    return json.loads(artifacts["summary.json"])
