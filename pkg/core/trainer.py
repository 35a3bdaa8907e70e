"""
Training for sdmseg
Alternating min-max optimisation of the dual-head segmenter and the SDM
discriminator, with schedules, batch loading, validation, log stream and
checkpoints
"""
import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from torch.utils.data import DataLoader, Dataset

from core.data_manager import DataManager
from core.errors import ConfigurationError, NonFiniteLossError, ValidationError
from core.evalmetrics import TABLE_COLUMNS, binarize, dice_jaccard, evaluate_dataset
from core.losses import (
    LossWeights,
    beta_schedule,
    dice_loss,
    discriminator_loss,
    generator_loss,
    mse_sdm_loss,
)
from core.models import DatasetSplit, IterationLog, Sample, VolumeShape
from core.segnet import (
    DiscriminatorConfig,
    SegmenterConfig,
    archive_dict,
    count_parameters,
    init_params,
    predict_volume,
)
from core.synthdata import augment, augment_image
from core.utils import slugify

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
LOG_NAME = 'train_log.jsonl'

MODES = ('supervised', 'supervised+sdm', 'full')


@dataclass
class TrainConfig:
    """Experiment configuration; defaults follow the full-scale recipe"""

    mode: str = 'full'
    total_iters: int = 6000
    seg_lr: float = 0.01
    seg_lr_decay: float = 0.1
    lr_decay_every: int = 2500
    momentum: float = 0.9
    weight_decay: float = 1e-4
    disc_lr: float = 1e-4
    batch_size: int = 4
    labeled_per_batch: int = 2
    alpha: float = 0.3
    beta_max: float = 0.001
    crop: List[int] = field(default_factory=lambda: [32, 32, 32])
    flip_prob: float = 0.5
    seed: int = 1337
    checkpoint_every: int = 500
    validate_every: int = 200
    max_checkpoints: int = 3
    threshold: float = 0.5
    base_channels: int = 8
    levels: int = 3
    norm: str = 'instance'
    disc_channels: List[int] = field(default_factory=lambda: [16, 32, 64, 128, 256])
    mlp_hidden: int = 64

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError('mode', f"must be one of {MODES}, got {self.mode!r}")
        if self.total_iters < 1:
            raise ConfigurationError('total_iters', f"must be at least 1, got {self.total_iters}")
        if self.batch_size < 1:
            raise ConfigurationError('batch_size', f"must be positive, got {self.batch_size}")
        if self.mode == 'full' and not 1 <= self.labeled_per_batch < self.batch_size:
            raise ConfigurationError(
                'labeled_per_batch',
                f"must be at least 1 and below batch_size ({self.batch_size}), got {self.labeled_per_batch}",
            )
        for key in ('seg_lr', 'disc_lr', 'lr_decay_every', 'checkpoint_every', 'validate_every', 'max_checkpoints'):
            if getattr(self, key) <= 0:
                raise ConfigurationError(key, f"must be positive, got {getattr(self, key)}")
        for key in ('alpha', 'beta_max', 'weight_decay', 'momentum'):
            if getattr(self, key) < 0:
                raise ConfigurationError(key, f"must be non-negative, got {getattr(self, key)}")
        if not 0 < self.seg_lr_decay <= 1:
            raise ConfigurationError('seg_lr_decay', f"must lie in (0, 1], got {self.seg_lr_decay}")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigurationError('flip_prob', f"must lie in [0, 1], got {self.flip_prob}")
        if len(self.crop) != 3 or min(self.crop) < 1:
            raise ConfigurationError('crop', f"must be three positive sizes [d, h, w], got {self.crop}")
        self.crop = [int(c) for c in self.crop]
        self.disc_channels = [int(c) for c in self.disc_channels]
        # builds and validates the network configs
        divisor = self.segmenter_config().divisor
        if any(c % divisor for c in self.crop):
            raise ConfigurationError('crop', f"sizes {self.crop} must be divisible by {divisor}")
        if self.adversarial:
            self.discriminator_config()

    @property
    def adversarial(self) -> bool:
        return self.mode == 'full'

    @property
    def labeled_count(self) -> int:
        """Labeled items per batch"""
        return self.labeled_per_batch if self.adversarial else self.batch_size

    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.mode == 'supervised' else self.alpha

    @property
    def crop_shape(self) -> VolumeShape:
        return VolumeShape.from_dhw(self.crop)

    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha=self.effective_alpha, beta_max=self.beta_max, t_max=self.total_iters)

    def segmenter_config(self) -> SegmenterConfig:
        return SegmenterConfig(base_channels=self.base_channels, levels=self.levels, norm=self.norm,
                               with_sdm_head=self.mode != 'supervised')

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(conv_channels=list(self.disc_channels), mlp_hidden=self.mlp_hidden)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> 'TrainConfig':
        known = {f.name for f in fields(TrainConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(unknown[0], "unknown configuration key")
        return TrainConfig(**data)


def lr_schedule(t: int, config: TrainConfig) -> float:
    """Step decay: seg_lr * seg_lr_decay ** floor(t / lr_decay_every)"""
    if t < 0:
        raise ValidationError(f"iteration must be non-negative, got {t}")
    return config.seg_lr * config.seg_lr_decay ** (t // config.lr_decay_every)


# Data

@dataclass
class TrainingData:
    """In-memory labeled samples, unlabeled images and validation pairs"""

    labeled: List[Sample]
    unlabeled: List[np.ndarray]
    val: List[Sample] = field(default_factory=list)

    @staticmethod
    def from_manager(dm: DataManager, config: TrainConfig, split: Optional[DatasetSplit] = None) -> 'TrainingData':
        """
        Load a dataset for training

        Args:
            dm: DataManager of the dataset
            config: Train config (unlabeled volumes are only loaded when adversarial)
            split: Split override (default: the manifest split)
        """
        split = split or dm.split
        if config.adversarial and not split.unlabeled_ids:
            raise ConfigurationError('mode', "adversarial training needs unlabeled volumes in the split")
        labeled = [dm.load_sample(i) for i in split.labeled_ids]
        unlabeled = [dm.load(i, 'image') for i in split.unlabeled_ids] if config.adversarial else []
        val = [dm.load_sample(i) for i in split.val_ids]
        logger.info("Loaded %d labeled, %d unlabeled, %d val volumes", len(labeled), len(unlabeled), len(val))
        return TrainingData(labeled, unlabeled, val)


@dataclass
class Batch:
    """Stacked (B, 1, D, H, W) float32 arrays"""

    labeled_x: np.ndarray
    labeled_y: np.ndarray
    labeled_z: np.ndarray
    unlabeled_x: Optional[np.ndarray] = None

    @property
    def n_labeled(self) -> int:
        return self.labeled_x.shape[0]

    @property
    def n_unlabeled(self) -> int:
        return 0 if self.unlabeled_x is None else self.unlabeled_x.shape[0]


def sample_batch(data: TrainingData, config: TrainConfig, rng: np.random.Generator) -> Batch:
    """
    Draw one training batch uniformly with replacement

    Full mode draws ``labeled_per_batch`` labeled and the rest unlabeled crops;
    the supervised modes fill the batch with labeled crops.
    """
    if not data.labeled:
        raise ConfigurationError('labeled', "the split has no labeled volumes")
    crop = config.crop_shape
    labeled = [augment(data.labeled[i], crop, rng, config.flip_prob)
               for i in rng.integers(0, len(data.labeled), size=config.labeled_count)]
    batch = Batch(
        labeled_x=np.stack([s.volume for s in labeled])[:, None].astype(np.float32),
        labeled_y=np.stack([s.mask for s in labeled])[:, None].astype(np.float32),
        labeled_z=np.stack([s.sdm for s in labeled])[:, None].astype(np.float32),
    )
    if config.adversarial:
        if not data.unlabeled:
            raise ConfigurationError('mode', "adversarial training needs unlabeled volumes")
        picks = rng.integers(0, len(data.unlabeled), size=config.batch_size - config.labeled_count)
        batch.unlabeled_x = np.stack([augment_image(data.unlabeled[i], crop, rng, config.flip_prob)
                                      for i in picks])[:, None].astype(np.float32)
    return batch


def batch_for_iteration(data: TrainingData, config: TrainConfig, t: int) -> Batch:
    """Batch of iteration ``t``: a pure function of (seed, t)"""
    return sample_batch(data, config, np.random.default_rng([config.seed, t]))


class IterationBatches(Dataset):
    """
    Batches of iterations ``start..stop`` (inclusive) in order

    Item ``i`` is the batch of iteration ``start + i``; a loader may build items
    ahead of the loop without changing what any iteration sees.
    """

    def __init__(self, data: TrainingData, config: TrainConfig, start: int, stop: int):
        self.data = data
        self.config = config
        self.start = start
        self.stop = stop

    def __len__(self) -> int:
        return max(0, self.stop - self.start + 1)

    def __getitem__(self, index: int) -> Tuple[int, Batch]:
        if not 0 <= index < len(self):
            raise IndexError(index)
        t = self.start + index
        return t, batch_for_iteration(self.data, self.config, t)


def _as_built(item):
    return item


def batch_loader(data: TrainingData, config: TrainConfig, start: int, stop: int, prefetch: int = 2) -> DataLoader:
    """
    Loader over iterations ``start..stop``

    Args:
        prefetch: Batches built ahead by one worker process (0 builds them inline)
    """
    return DataLoader(
        IterationBatches(data, config, start, stop),
        batch_size=None,
        shuffle=False,
        num_workers=1 if prefetch > 0 else 0,
        prefetch_factor=prefetch if prefetch > 0 else None,
        collate_fn=_as_built,
    )


# Training

@dataclass
class TrainingResult:
    final_checkpoint: Path
    logs: List[dict]
    val_dice: Optional[float]
    segmenter_params: int
    discriminator_params: int


def _finite(values: Dict[str, float]) -> bool:
    return all(math.isfinite(v) for v in values.values())


class ShapeAwareTrainer:
    """
    Owns the segmenter, the discriminator and their optimizers

    Each iteration updates the segmenter once with the discriminator frozen,
    then the discriminator once with the segmenter frozen.
    """

    def __init__(self, config: TrainConfig, data: TrainingData, out_dir, device='cpu', prefetch: int = 2):
        """
        Args:
            config: Train config
            data: Loaded training data
            out_dir: Run directory for checkpoints and the log stream
            device: Torch device
            prefetch: Batches built ahead of the loop (0 builds them inline)
        """
        self.config = config
        self.data = data
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.device = torch.device(device)
        self.prefetch = prefetch
        self.t = 0
        self.logs: List[dict] = []

        if not data.labeled:
            raise ConfigurationError('labeled', "the split has no labeled volumes")
        if config.adversarial and not data.unlabeled:
            raise ConfigurationError('mode', "adversarial training needs unlabeled volumes")
        for sample in data.labeled + data.val:
            if not config.crop_shape.fits_in(sample.shape):
                raise ConfigurationError('crop', f"crop {config.crop} exceeds volume {sample.shape.array_shape}")

        self.segmenter = init_params(config.segmenter_config(), config.seed).to(self.device)
        self.seg_optimizer = torch.optim.SGD(self.segmenter.parameters(), lr=config.seg_lr,
                                             momentum=config.momentum, weight_decay=config.weight_decay)
        self.discriminator = None
        self.disc_optimizer = None
        if config.adversarial:
            self.discriminator = init_params(config.discriminator_config(), config.seed + 1).to(self.device)
            self.disc_optimizer = torch.optim.Adam(self.discriminator.parameters(), lr=config.disc_lr)

    # Steps

    def _tensor(self, array: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(array, dtype=torch.float32, device=self.device)

    def _segmenter_objective(self, batch: Batch, t: int) -> Dict[str, torch.Tensor]:
        config = self.config
        weights = config.loss_weights()
        x_l = self._tensor(batch.labeled_x)
        if config.adversarial:
            x = torch.cat([x_l, self._tensor(batch.unlabeled_x)])
        else:
            x = x_l
        m, s = self.segmenter(x)
        nl = batch.n_labeled

        dice = dice_loss(m[:nl], self._tensor(batch.labeled_y))
        if s is not None and weights.alpha > 0:
            mse = mse_sdm_loss(s[:nl], self._tensor(batch.labeled_z))
        else:
            mse = torch.zeros((), device=self.device)
        total = dice + weights.alpha * mse

        adversarial = torch.zeros((), device=self.device)
        beta = 0.0
        if config.adversarial:
            # only unlabeled SDMs meet the discriminator here
            d_unlabeled = self.discriminator(x[nl:], s[nl:])
            adversarial = generator_loss(d_unlabeled)
            beta = beta_schedule(t, weights.t_max, weights.beta_max)
            total = total + beta * adversarial
        return {'total': total, 'dice': dice, 'sdm_mse': mse, 'adversarial': adversarial, 'beta': beta}

    def segmenter_step(self, batch: Batch, t: int) -> Dict[str, float]:
        """
        One SGD step on the supervised loss plus beta(t) times the generator loss

        The discriminator is frozen: its parameters get no gradient.
        """
        self.segmenter.train()
        lr = lr_schedule(t, self.config)
        for group in self.seg_optimizer.param_groups:
            group['lr'] = lr

        frozen = list(self.discriminator.parameters()) if self.discriminator is not None else []
        for p in frozen:
            p.requires_grad_(False)
        try:
            terms = self._segmenter_objective(batch, t)
            values = {
                'seg_loss': float(terms['total'].detach()),
                'dice': float(terms['dice'].detach()),
                'sdm_mse': float(terms['sdm_mse'].detach()),
                'adversarial': float(terms['adversarial'].detach()),
            }
            if not _finite(values):
                raise NonFiniteLossError(t, values)
            self.seg_optimizer.zero_grad(set_to_none=True)
            terms['total'].backward()
            self.seg_optimizer.step()
        finally:
            for p in frozen:
                p.requires_grad_(True)

        values['beta'] = float(terms['beta'])
        values['lr'] = lr
        return values

    def discriminator_step(self, batch: Batch, t: int = 0) -> float:
        """One Adam step on the discriminator cross entropy with the segmenter frozen"""
        if self.discriminator is None:
            return 0.0
        x_l = self._tensor(batch.labeled_x)
        x_u = self._tensor(batch.unlabeled_x)
        with torch.no_grad():
            _, s = self.segmenter(torch.cat([x_l, x_u]))
        nl = batch.n_labeled

        self.discriminator.train()
        loss = discriminator_loss(self.discriminator(x_l, s[:nl]), self.discriminator(x_u, s[nl:]))
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLossError(t, {'disc_loss': value})
        self.disc_optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.disc_optimizer.step()
        return value

    # Validation

    def validate(self) -> Optional[Dict[str, float]]:
        """Mean Dice / Jaccard on the val volumes (threshold only, no NMS)"""
        if not self.data.val:
            return None
        divisor = self.config.segmenter_config().divisor
        scores = []
        for sample in self.data.val:
            patch = None if all(s % divisor == 0 for s in sample.volume.shape) else self.config.crop
            prob, _ = predict_volume(self.segmenter, sample.volume, patch=patch, device=self.device)
            scores.append(dice_jaccard(binarize(prob, self.config.threshold), sample.mask))
        dice, jaccard = np.mean(scores, axis=0)
        return {'dice': float(dice), 'jaccard': float(jaccard)}

    # Checkpoints

    def checkpoint_state(self) -> dict:
        return {
            'format_version': CHECKPOINT_FORMAT_VERSION,
            't': self.t,
            'config': self.config.to_dict(),
            'segmenter': archive_dict(self.segmenter),
            'discriminator': archive_dict(self.discriminator) if self.discriminator is not None else None,
            'seg_optimizer': self.seg_optimizer.state_dict(),
            'disc_optimizer': self.disc_optimizer.state_dict() if self.disc_optimizer is not None else None,
            'rng': {'seed': self.config.seed, 'torch': torch.get_rng_state()},
        }

    def save_checkpoint(self, name: str, state: Optional[dict] = None) -> Path:
        """Write ``state`` (default: the current state) atomically under the run directory"""
        target = self.out_dir / name
        temp = target.with_name(target.name + '.tmp')
        torch.save(self.checkpoint_state() if state is None else state, temp)
        temp.replace(target)
        return target

    def _cleanup_old_checkpoints(self):
        """Remove old periodic checkpoints, keeping only max_checkpoints most recent"""
        checkpoints = sorted(self.out_dir.glob('ckpt_*.pt'), reverse=True)
        for old in checkpoints[self.config.max_checkpoints:]:
            try:
                old.unlink()
                logger.debug("Removed old checkpoint: %s", old.name)
            except OSError as e:
                logger.warning("Error removing old checkpoint %s: %s", old.name, e)

    def resume(self, path):
        """Restore parameters, optimizer states and iteration from a checkpoint"""
        state = torch.load(path, map_location=self.device, weights_only=False)
        if state.get('format_version') != CHECKPOINT_FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint format {state.get('format_version')!r}")

        saved = dict(state['config'])
        current = self.config.to_dict()
        saved.pop('total_iters', None)
        current.pop('total_iters', None)
        if saved != current:
            changed = sorted(k for k in current if saved.get(k) != current[k])
            logger.warning("Resuming with a changed configuration: %s", ', '.join(changed))

        self.segmenter.load_state_dict(state['segmenter']['params'])
        self.seg_optimizer.load_state_dict(state['seg_optimizer'])
        if self.discriminator is not None:
            if state['discriminator'] is None:
                raise ValidationError(f"{path}: checkpoint has no discriminator for adversarial training")
            self.discriminator.load_state_dict(state['discriminator']['params'])
            self.disc_optimizer.load_state_dict(state['disc_optimizer'])
        torch.set_rng_state(state['rng']['torch'])
        self.t = int(state['t'])

        self.logs = [r for r in self._read_log() if r['t'] <= self.t]
        self._rewrite_log()
        logger.info("Resumed from %s at iteration %d", path, self.t)

    # Log stream

    @property
    def log_file(self) -> Path:
        return self.out_dir / LOG_NAME

    def _read_log(self) -> List[dict]:
        if not self.log_file.exists():
            return []
        with open(self.log_file, 'r', encoding='utf-8') as f:
            return [json.loads(line) for line in f if line.strip()]

    def _rewrite_log(self):
        with open(self.log_file, 'w', encoding='utf-8') as f:
            for record in self.logs:
                f.write(json.dumps(record) + '\n')

    def _append_log(self, record: dict):
        self.logs.append(record)
        with open(self.log_file, 'a', encoding='utf-8') as f:
            f.write(json.dumps(record) + '\n')

    # Loop

    def run(self) -> TrainingResult:
        """Train from the current iteration to total_iters"""
        config = self.config
        if self.t == 0:
            self.logs = []
            self._rewrite_log()
        logger.info("Training mode=%s from t=%d to %d", config.mode, self.t + 1, config.total_iters)

        started = time.perf_counter()
        last_val = None
        for t, batch in batch_loader(self.data, config, self.t + 1, config.total_iters, self.prefetch):
            before = copy.deepcopy(self.checkpoint_state())
            try:
                seg = self.segmenter_step(batch, t)
                disc = self.discriminator_step(batch, t)
            except NonFiniteLossError as e:
                logger.error("Aborting: %s", e)
                path = self.save_checkpoint('abort.pt', before)
                logger.error("State before the failing step saved to %s", path)
                raise
            self.t = t

            record = IterationLog(
                t=t, dice=seg['dice'], sdm_mse=seg['sdm_mse'], adversarial=seg['adversarial'],
                seg_loss=seg['seg_loss'], disc_loss=disc, beta=seg['beta'], lr=seg['lr'],
                wall_time=time.perf_counter() - started,
            )
            self._append_log(record.to_dict())
            if t % 50 == 0 or t == 1:
                logger.info("t=%d seg=%.4f dice=%.4f mse=%.4f adv=%.4f disc=%.4f beta=%.2e lr=%.1e",
                            t, seg['seg_loss'], seg['dice'], seg['sdm_mse'], seg['adversarial'], disc,
                            seg['beta'], seg['lr'])

            if t % config.validate_every == 0 or t == config.total_iters:
                last_val = self.validate()
                if last_val is not None:
                    self._append_log({'kind': 'validation', 't': t, **last_val})
                    logger.info("t=%d val dice=%.4f jaccard=%.4f", t, last_val['dice'], last_val['jaccard'])

            if t % config.checkpoint_every == 0:
                self.save_checkpoint(f"ckpt_{t:06d}.pt")
                self._cleanup_old_checkpoints()

        final = self.save_checkpoint('final.pt')
        if last_val is None:
            last_val = next((r for r in reversed(self.logs) if r.get('kind') == 'validation'), None)
        return TrainingResult(
            final_checkpoint=final,
            logs=list(self.logs),
            val_dice=None if last_val is None else last_val['dice'],
            segmenter_params=count_parameters(self.segmenter),
            discriminator_params=count_parameters(self.discriminator),
        )


def configure_determinism(deterministic: bool, threads: Optional[int] = None):
    """Deterministic kernels and a fixed intra-op thread count"""
    torch.use_deterministic_algorithms(deterministic)
    if threads:
        torch.set_num_threads(threads)


def run_training(dataset, config: TrainConfig, out_dir, resume=None, device='cpu', prefetch: int = 2,
                 split: Optional[DatasetSplit] = None) -> TrainingResult:
    """
    Train a model end to end

    Args:
        dataset: Dataset directory / manifest path, DataManager or TrainingData
        config: Train config
        out_dir: Run directory
        resume: Checkpoint to continue from
        device: Torch device
        prefetch: Batches built ahead of the loop
        split: Split override (used by the fully supervised upper bound)

    Returns:
        TrainingResult: final checkpoint path, log records and final val Dice
    """
    if isinstance(dataset, TrainingData):
        data = dataset
    else:
        dm = dataset if isinstance(dataset, DataManager) else DataManager(dataset)
        data = TrainingData.from_manager(dm, config, split)

    trainer = ShapeAwareTrainer(config, data, out_dir, device=device, prefetch=prefetch)
    if resume is not None:
        trainer.resume(resume)
    return trainer.run()


# Ablation

ABLATION_ARMS = ('supervised', 'supervised+sdm', 'full')
UPPER_BOUND_ARM = 'upper-bound'


def starved_split(split: DatasetSplit, labeled: Optional[int] = None) -> DatasetSplit:
    """Keep the first ``labeled`` labeled ids; the rest join the unlabeled pool"""
    if labeled is None:
        return split
    if not 1 <= labeled <= len(split.labeled_ids):
        raise ConfigurationError('labeled', f"must lie in [1, {len(split.labeled_ids)}], got {labeled}")
    return DatasetSplit(
        labeled_ids=list(split.labeled_ids[:labeled]),
        unlabeled_ids=sorted(split.labeled_ids[labeled:] + split.unlabeled_ids),
        val_ids=list(split.val_ids),
    )


def upper_bound_split(split: DatasetSplit) -> DatasetSplit:
    """Every training volume labeled"""
    return DatasetSplit(
        labeled_ids=sorted(split.labeled_ids + split.unlabeled_ids),
        unlabeled_ids=[],
        val_ids=list(split.val_ids),
    )


def run_ablation(dm: DataManager, config: TrainConfig, out_dir, seeds: Sequence[int] = (0, 1, 2),
                 upper_bound: bool = False, labeled: Optional[int] = None, device='cpu',
                 prefetch: int = 2) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Train and score every ablation arm over shared seeds

    Args:
        dm: DataManager of the dataset
        config: Base train config; mode and seed are set per arm and run
        out_dir: Run directory; each run trains under ``<arm>/seed_<seed>``
        seeds: Seeds shared by all arms
        upper_bound: Add the supervised arm trained on every training volume
        labeled: Labeled budget (default: the manifest split)
        device: Torch device
        prefetch: Batches built ahead of the loop

    Returns:
        Tuple[pd.DataFrame, pd.DataFrame]: per-run rows and the per-arm comparison
    """
    split = starved_split(dm.split, labeled)
    if not split.val_ids:
        raise ConfigurationError('val', "ablation needs validation volumes")
    if not seeds:
        raise ConfigurationError('seeds', "at least one seed is required")

    arms = [(mode, mode, split) for mode in ABLATION_ARMS]
    if upper_bound:
        arms.append((UPPER_BOUND_ARM, 'supervised', upper_bound_split(split)))

    rows = []
    for name, mode, arm_split in arms:
        for seed in seeds:
            arm_config = replace(config, mode=mode, seed=int(seed))
            run_dir = Path(out_dir) / slugify(name) / f"seed_{seed}"
            logger.info("Ablation arm %s, seed %s -> %s", name, seed, run_dir)
            result = run_training(dm, arm_config, run_dir, device=device, prefetch=prefetch, split=arm_split)
            report = evaluate_dataset(result.final_checkpoint, dm, ids=arm_split.val_ids,
                                      threshold=config.threshold, device=device)
            means = report.summary()['means'].get('nms_off', {})
            rows.append({
                'arm': name,
                'seed': int(seed),
                'labeled': len(arm_split.labeled_ids),
                **{column: means.get(column) for column in TABLE_COLUMNS},
                'Params[M]': result.segmenter_params / 1e6,
            })

    runs = pd.DataFrame.from_records(rows, columns=['arm', 'seed', 'labeled'] + TABLE_COLUMNS + ['Params[M]'])
    runs[TABLE_COLUMNS] = runs[TABLE_COLUMNS].astype(float)
    comparison = runs.groupby('arm', sort=False).agg(
        labeled=('labeled', 'first'),
        seeds=('seed', 'count'),
        **{column: (column, 'mean') for column in TABLE_COLUMNS},
        Dice_std=('Dice', 'std'),
        **{'Params[M]': ('Params[M]', 'first')},
    ).reset_index()
    return runs, comparison
