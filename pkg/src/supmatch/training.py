"""Adversarial support-matching training loop.

Each iteration draws a batch of paired (training, deployment) bags, runs
the configured number of discriminator maximization updates, then one
minimization update of the encoder / decoder / predictors. The adversarial
term rewards the encoder for making every bag look deployment-like to the
set discriminator; gradients flow through the encoder on both bags unless
the stop-gradient flag detaches the deployment-bag term.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .bagging import BalancingScheme, sample_deployment_bag, sample_train_bag
from .exceptions import StateError, TrainingError, ValidationError
from .model import (
    BagDiscriminator,
    InstanceDiscriminator,
    SplitAutoencoder,
    build_image_model,
    build_tabular_model,
    load_checkpoint,
    save_checkpoint,
)
from .validation import new_rng


@dataclass
class ModelConfig:
    """Architecture knobs for the split autoencoder."""

    encoding_size: int = 64
    hidden: tuple = (32, 64, 128)
    level_depth: int = 1
    binarize_s: bool = False
    feature_blocks: list = None  # tabular only; enables the mixed recon loss

    def build(self, feature_shape, n_s: int, n_y: int) -> SplitAutoencoder:
        if len(feature_shape) == 3:
            return build_image_model(
                input_channels=feature_shape[0],
                input_size=feature_shape[1],
                hidden_channels=self.hidden,
                level_depth=self.level_depth,
                encoding_size=self.encoding_size,
                n_s=n_s,
                n_y=n_y,
                binarize_s=self.binarize_s,
            )
        return build_tabular_model(
            input_dim=feature_shape[0],
            hidden=self.hidden,
            encoding_size=self.encoding_size,
            n_s=n_s,
            n_y=n_y,
            binarize_s=self.binarize_s,
            feature_blocks=self.feature_blocks,
        )


@dataclass
class TrainConfig:
    bag_size: int = 32
    bags_per_batch: int = 8
    iterations: int = 1000
    lambda_y: float = 1.0
    lambda_s: float = 1.0
    lambda_adv: float = 1.0
    embed_l2: float = 1e-2
    disc_updates: int = 1
    stop_gradient: bool = False
    attention_kind: str = "gated"
    attention_embed_dim: int = 32
    disc_pre_hidden: tuple = (64, 64)
    disc_post_hidden: tuple = (64,)
    lr_encoder: float = 1e-3
    lr_predictors: float = 3e-4
    lr_disc: float = 3e-4
    scheme: BalancingScheme = BalancingScheme.ORACLE_BALANCED
    instancewise: bool = False
    checkpoint_every: int = 500
    seed: int = 0

    def __post_init__(self):
        for name in ("lambda_y", "lambda_s", "lambda_adv", "embed_l2"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.iterations < 1:
            raise ValidationError("iterations must be at least 1")
        self.scheme = BalancingScheme(self.scheme)


@dataclass
class LossBreakdown:
    """Weighted loss contributions for one encoder update."""

    recon_train: float
    recon_dep: float
    adv: float
    sup_y: float
    sup_s: float
    l2_reg: float

    @property
    def total(self) -> float:
        return self.recon_train + self.recon_dep + self.adv + self.sup_y + self.sup_s + self.l2_reg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["total"] = self.total
        return out

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in asdict(self).values())


def _gather_bags(dataset, bags) -> torch.Tensor:
    """Stack bag features into (n_bags, bag_size, *feature_shape)."""
    idx = np.stack([bag.indices for bag in bags])
    flat = dataset.features[torch.from_numpy(idx.reshape(-1))]
    return flat.view(len(bags), -1, *dataset.features.shape[1:])


def _bag_logits(discriminator, z_bags: torch.Tensor) -> torch.Tensor:
    out = discriminator(z_bags)
    return out.logit.reshape(-1)


def encoder_loss(model, discriminator, train_x, train_s, train_y, dep_x, config):
    """Loss for one encoder/decoder/predictor update over a batch of bags.

    ``train_x`` / ``dep_x``: (bags, bag_size, *feature_shape); labels are
    flat over the training bags. Returns (total tensor, LossBreakdown).
    """
    n_bags, bag_size = train_x.shape[0], train_x.shape[1]
    flat_tr = train_x.reshape(-1, *train_x.shape[2:])
    flat_dep = dep_x.reshape(-1, *dep_x.shape[2:])
    enc_tr = model.encode(flat_tr)
    enc_dep = model.encode(flat_dep)

    recon_tr = model.recon_loss(model.decode(enc_tr.z, enc_tr.s_tilde), flat_tr)
    recon_dep = model.recon_loss(model.decode(enc_dep.z, enc_dep.s_tilde), flat_dep)

    adv = train_x.new_zeros(())
    if config.lambda_adv > 0:
        z_tr = enc_tr.z.view(n_bags, bag_size, -1)
        z_dep = enc_dep.z.view(dep_x.shape[0], dep_x.shape[1], -1)
        if config.stop_gradient:
            z_dep = z_dep.detach()
        if config.instancewise:
            logits = torch.cat(
                [discriminator(z_tr.reshape(-1, z_tr.shape[-1])).logit,
                 discriminator(z_dep.reshape(-1, z_dep.shape[-1])).logit]
            )
        else:
            logits = torch.cat([_bag_logits(discriminator, z_tr), _bag_logits(discriminator, z_dep)])
        # Encoder wants every bag judged deployment-like (label 1).
        adv = config.lambda_adv * F.binary_cross_entropy_with_logits(
            logits, torch.ones_like(logits)
        )

    sup_y = train_x.new_zeros(())
    sup_s = train_x.new_zeros(())
    if config.lambda_y > 0:
        sup_y = config.lambda_y * F.cross_entropy(model.y_logits(enc_tr.z), train_y)
    if config.lambda_s > 0:
        sup_s = config.lambda_s * model.supervised_s_loss(enc_tr.s_tilde, train_s)

    l2 = train_x.new_zeros(())
    if config.embed_l2 > 0:
        embeddings = torch.cat([enc_tr.full, enc_dep.full])
        l2 = config.embed_l2 * embeddings.pow(2).sum(dim=-1).mean()

    total = recon_tr + recon_dep + adv + sup_y + sup_s + l2
    breakdown = LossBreakdown(
        recon_train=float(recon_tr),
        recon_dep=float(recon_dep),
        adv=float(adv),
        sup_y=float(sup_y),
        sup_s=float(sup_s),
        l2_reg=float(l2),
    )
    return total, breakdown


def discriminator_loss(discriminator, z_train, z_dep, instancewise=False):
    """Origin classification loss: deployment bags labeled 1, training 0."""
    if instancewise:
        logit_tr = discriminator(z_train.reshape(-1, z_train.shape[-1])).logit
        logit_dep = discriminator(z_dep.reshape(-1, z_dep.shape[-1])).logit
    else:
        logit_tr = _bag_logits(discriminator, z_train)
        logit_dep = _bag_logits(discriminator, z_dep)
    loss = F.binary_cross_entropy_with_logits(
        logit_tr, torch.zeros_like(logit_tr)
    ) + F.binary_cross_entropy_with_logits(logit_dep, torch.ones_like(logit_dep))
    correct = float((logit_tr < 0).float().mean() + (logit_dep > 0).float().mean()) / 2
    return loss, correct


def adversarial_step(model, discriminator, batch, config, enc_opt, disc_opt):
    """One min-max iteration over a prepared batch of bags.

    ``batch``: (train_x, train_s, train_y, dep_x) tensors. Runs the
    configured discriminator updates first, then one encoder update.
    """
    train_x, train_s, train_y, dep_x = batch

    with torch.no_grad():
        z_tr = model.encode(train_x.reshape(-1, *train_x.shape[2:])).z.view(
            train_x.shape[0], train_x.shape[1], -1
        )
        z_dep = model.encode(dep_x.reshape(-1, *dep_x.shape[2:])).z.view(
            dep_x.shape[0], dep_x.shape[1], -1
        )
    disc_acc = 0.5
    for _ in range(config.disc_updates):
        disc_opt.zero_grad()
        loss, disc_acc = discriminator_loss(discriminator, z_tr, z_dep, config.instancewise)
        loss.backward()
        disc_opt.step()

    enc_opt.zero_grad()
    disc_opt.zero_grad()
    total, breakdown = encoder_loss(model, discriminator, train_x, train_s, train_y, dep_x, config)
    total.backward()
    enc_opt.step()
    disc_opt.zero_grad()  # discard adversarial-term gradients on h
    return breakdown, disc_acc


@dataclass
class TrainResult:
    model: SplitAutoencoder
    discriminator: torch.nn.Module
    history: list = field(default_factory=list)
    checkpoint_dir: Path = None


def _encode_rng_state(np_rng, torch_state) -> dict:
    return {
        "numpy": json.loads(json.dumps(np_rng.bit_generator.state)),
        "torch": base64.b64encode(torch_state.numpy().tobytes()).decode("ascii"),
    }


def _restore_rng_state(state: dict, np_rng) -> None:
    np_rng.bit_generator.state = state["numpy"]
    raw = np.frombuffer(base64.b64decode(state["torch"]), dtype=np.uint8)
    torch.set_rng_state(torch.from_numpy(raw.copy()))


def _save_optimizer(directory, name, optimizer):
    payload = optimizer.state_dict()
    arrays, meta = {}, {"param_groups": payload["param_groups"], "state_keys": {}}
    for pid, state in payload["state"].items():
        for key, value in state.items():
            if torch.is_tensor(value):
                arrays[f"{pid}__{key}"] = value.numpy()
                meta["state_keys"].setdefault(str(pid), {})[key] = "tensor"
            else:
                meta["state_keys"].setdefault(str(pid), {})[key] = value
    np.savez(directory / f"{name}_optimizer.npz", **arrays)
    (directory / f"{name}_optimizer.json").write_text(json.dumps(meta))


def _load_optimizer(directory, name, optimizer):
    meta = json.loads((directory / f"{name}_optimizer.json").read_text())
    arrays = np.load(directory / f"{name}_optimizer.npz")
    state = {}
    for pid, keys in meta["state_keys"].items():
        entry = {}
        for key, kind in keys.items():
            if kind == "tensor":
                entry[key] = torch.from_numpy(arrays[f"{pid}__{key}"])
            else:
                entry[key] = kind
        state[int(pid)] = entry
    optimizer.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def _build_networks(train_dataset, model_config, config, n_s, n_y):
    feature_shape = tuple(train_dataset.features.shape[1:])
    model = model_config.build(feature_shape, n_s, n_y)
    if config.instancewise:
        disc = InstanceDiscriminator(model.z_width, hidden=config.disc_pre_hidden)
    else:
        disc = BagDiscriminator(
            model.z_width,
            pre_hidden=config.disc_pre_hidden,
            post_hidden=config.disc_post_hidden,
            attention_kind=config.attention_kind,
            attention_embed_dim=config.attention_embed_dim,
        )
    return model, disc


def train_loop(
    train_dataset,
    deployment_dataset,
    spec,
    config: TrainConfig,
    model_config: ModelConfig = None,
    run_dir=None,
    resume_from=None,
    log_callback=None,
):
    """Run the full adversarial loop; returns a TrainResult.

    Writes per-step JSON-lines logs and periodic checkpoints when
    ``run_dir`` is given. ``resume_from`` restores a checkpoint (including
    optimizer and RNG state) and continues to ``config.iterations``.
    """
    if config.scheme is BalancingScheme.CLUSTER_BALANCED and deployment_dataset.cluster_ids is None:
        raise StateError("cluster-balanced training requires cluster assignments before step 0")
    model_config = model_config or ModelConfig()
    torch.manual_seed(config.seed)
    rng = new_rng(config.seed)
    model, disc = _build_networks(train_dataset, model_config, config, spec.n_s, spec.n_y)

    enc_params = [
        {"params": list(model.encoder.parameters()) + list(model.decoder.parameters()),
         "lr": config.lr_encoder},
        {"params": [p for m in (model.y_predictor, model.s_readout) if m is not None
                    for p in m.parameters()],
         "lr": config.lr_predictors},
    ]
    enc_opt = torch.optim.Adam(enc_params)
    disc_opt = torch.optim.Adam(disc.parameters(), lr=config.lr_disc)

    start_step = 0
    if resume_from is not None:
        manifest = load_checkpoint(resume_from, {"model": model, "discriminator": disc})
        _load_optimizer(Path(resume_from), "encoder", enc_opt)
        _load_optimizer(Path(resume_from), "discriminator", disc_opt)
        _restore_rng_state(manifest["extras"]["rng"], rng)
        start_step = manifest["step"]

    run_dir = Path(run_dir) if run_dir is not None else None
    log_path = checkpoint_root = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        log_path = run_dir / "logs.jsonl"
        if resume_from is None and log_path.exists():
            log_path.unlink()
        checkpoint_root = run_dir / "checkpoints"

    def _checkpoint(step) -> Path:
        if checkpoint_root is None:
            return None
        directory = checkpoint_root / f"step_{step:06d}"
        save_checkpoint(
            directory,
            {"model": model, "discriminator": disc},
            step=step,
            extras={"rng": _encode_rng_state(rng, torch.get_rng_state())},
        )
        _save_optimizer(directory, "encoder", enc_opt)
        _save_optimizer(directory, "discriminator", disc_opt)
        return directory

    history = []
    last_checkpoint = None
    for step in range(start_step, config.iterations):
        train_bags = [
            sample_train_bag(spec, train_dataset, config.bag_size, rng)
            for _ in range(config.bags_per_batch)
        ]
        dep_bags = [
            sample_deployment_bag(deployment_dataset, config.scheme, config.bag_size, rng)
            for _ in range(config.bags_per_batch)
        ]
        train_x = _gather_bags(train_dataset, train_bags)
        dep_x = _gather_bags(deployment_dataset, dep_bags)
        flat_idx = np.concatenate([bag.indices for bag in train_bags])
        train_s = torch.from_numpy(train_dataset.s[flat_idx])
        train_y = torch.from_numpy(train_dataset.y[flat_idx])

        breakdown, disc_acc = adversarial_step(
            model, disc, (train_x, train_s, train_y, dep_x), config, enc_opt, disc_opt
        )
        record = {"step": step, "disc_bag_accuracy": disc_acc, **breakdown.to_dict()}
        history.append(record)
        if log_path is not None:
            with log_path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if log_callback is not None:
            log_callback(record)

        if not breakdown.is_finite():
            raise TrainingError(
                f"non-finite loss at step {step}: {breakdown.to_dict()}",
                last_checkpoint=last_checkpoint,
            )
        if checkpoint_root is not None and (step + 1) % config.checkpoint_every == 0:
            last_checkpoint = _checkpoint(step + 1)

    final_dir = _checkpoint(config.iterations)
    model.eval()
    disc.eval()
    return TrainResult(model=model, discriminator=disc, history=history, checkpoint_dir=final_dir)


def train_instancewise_ablation(train_dataset, deployment_dataset, spec, config, **kwargs):
    """Set-wise pipeline with the discriminator consuming single samples;
    bagging and balancing stay in place."""
    from dataclasses import replace

    return train_loop(
        train_dataset, deployment_dataset, spec, replace(config, instancewise=True), **kwargs
    )
