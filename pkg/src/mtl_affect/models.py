"""Model assembly: backbone registry, task heads, and checkpoint I/O.

Single-task models pair one backbone with one head; the multi-task model
shares one backbone across all three heads (hard parameter sharing), so a
forward pass computes the embedding once. Heads are single affine maps; the
VA head is tanh-squashed so regression outputs live in the label range.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import torch
from torch import Tensor, nn

from .records import PredictionRecord

TASK_OUT_DIMS = {"va": 2, "expr": 8, "au": 12}
MODES = ("single-va", "single-expr", "single-au", "multi")

RESNET50_EMBEDDING_DIM = 2048


@dataclass(frozen=True)
class BackboneSpec:
    """Feature extractor choice: registry name, embedding width, init source."""

    name: str = "resnet50-class"
    embedding_dim: int = RESNET50_EMBEDDING_DIM
    pretrained: bool = False

    def __post_init__(self) -> None:
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")


@dataclass(frozen=True)
class HeadSpec:
    """One task head: a single affine map from the embedding."""

    task: str
    out_dim: int

    def __post_init__(self) -> None:
        if self.task not in TASK_OUT_DIMS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.out_dim != TASK_OUT_DIMS[self.task]:
            raise ValueError(
                f"{self.task} head must have out_dim {TASK_OUT_DIMS[self.task]}, got {self.out_dim}"
            )

    @classmethod
    def for_task(cls, task: str) -> "HeadSpec":
        if task not in TASK_OUT_DIMS:
            raise ValueError(f"unknown task {task!r}")
        return cls(task=task, out_dim=TASK_OUT_DIMS[task])


@dataclass(frozen=True)
class ModelAssembly:
    """Mode plus backbone spec; the head set follows from the mode."""

    mode: str
    backbone: BackboneSpec

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")

    @property
    def tasks(self) -> tuple[str, ...]:
        if self.mode == "multi":
            return ("va", "expr", "au")
        return (self.mode.removeprefix("single-"),)

    @property
    def heads(self) -> tuple[HeadSpec, ...]:
        return tuple(HeadSpec.for_task(t) for t in self.tasks)


@dataclass(frozen=True)
class PreprocessConfig:
    """Input contract: square resize plus per-channel normalization."""

    image_size: int = 224
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)

    def __post_init__(self) -> None:
        if self.image_size <= 0:
            raise ValueError("image_size must be positive")


class TinyBackbone(nn.Module):
    """Small strided conv net for tests and CPU experiments.

    Keeps an 8x8 spatial map before the projection so coarse layout
    information survives into the embedding.
    """

    def __init__(self, embedding_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(8, 16, kernel_size=3, stride=2, padding=1)
        self.pool = nn.AdaptiveAvgPool2d(8)
        self.proj = nn.Linear(16 * 8 * 8, embedding_dim)

    def forward(self, x: Tensor) -> Tensor:
        x = torch.relu(self.conv1(x))
        x = torch.relu(self.conv2(x))
        x = self.pool(x)
        x = torch.flatten(x, 1)
        return torch.relu(self.proj(x))


def _build_tiny(spec: BackboneSpec) -> nn.Module:
    return TinyBackbone(spec.embedding_dim)


def _build_resnet50_class(spec: BackboneSpec) -> nn.Module:
    if spec.embedding_dim != RESNET50_EMBEDDING_DIM:
        raise ValueError(
            f"resnet50-class backbone has embedding_dim {RESNET50_EMBEDDING_DIM}, "
            f"got {spec.embedding_dim}"
        )
    from torchvision.models import ResNet50_Weights, resnet50

    weights = ResNet50_Weights.DEFAULT if spec.pretrained else None
    net = resnet50(weights=weights)
    return nn.Sequential(*list(net.children())[:-1], nn.Flatten(1))


BACKBONES: dict[str, Callable[[BackboneSpec], nn.Module]] = {
    "tiny": _build_tiny,
    "resnet50-class": _build_resnet50_class,
}


@dataclass
class ModelOutputs:
    """Raw head outputs for one batch; None for heads the model lacks.

    va is already squashed to [-1, 1]; expr and au are logits.
    """

    va: Tensor | None = None
    expr_logits: Tensor | None = None
    au_logits: Tensor | None = None


class AffectModel(nn.Module):
    """Backbone plus per-task affine heads.

    All heads read the same embedding, so the tasks interact only through
    the shared features.
    """

    def __init__(self, assembly: ModelAssembly):
        super().__init__()
        if assembly.backbone.name not in BACKBONES:
            raise ValueError(
                f"unknown backbone {assembly.backbone.name!r}; "
                f"registered: {sorted(BACKBONES)}"
            )
        self.assembly = assembly
        self.backbone = BACKBONES[assembly.backbone.name](assembly.backbone)
        self.heads = nn.ModuleDict(
            {
                h.task: nn.Linear(assembly.backbone.embedding_dim, h.out_dim)
                for h in assembly.heads
            }
        )

    def forward(self, images: Tensor) -> ModelOutputs:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(
                f"expected a (batch, 3, H, W) image tensor, got {tuple(images.shape)}"
            )
        emb = self.backbone(images)
        return self.forward_from_embedding(emb)

    def forward_from_embedding(self, emb: Tensor) -> ModelOutputs:
        out = ModelOutputs()
        if "va" in self.heads:
            out.va = torch.tanh(self.heads["va"](emb))
        if "expr" in self.heads:
            out.expr_logits = self.heads["expr"](emb)
        if "au" in self.heads:
            out.au_logits = self.heads["au"](emb)
        return out


def build_model(assembly: ModelAssembly, seed: int | None = None) -> AffectModel:
    """Construct a model; a fixed seed makes initialization reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    return AffectModel(assembly)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def records_from_outputs(
    image_refs: Sequence[str], outputs: ModelOutputs
) -> list[PredictionRecord]:
    """Convert head outputs to per-sample probability records.

    Expression logits pass through softmax, AU logits through sigmoid; VA
    values are carried as-is (the head already squashes them).
    """
    va = outputs.va.detach().cpu().double() if outputs.va is not None else None
    expr = (
        torch.softmax(outputs.expr_logits.detach().double(), dim=1).cpu()
        if outputs.expr_logits is not None
        else None
    )
    au = (
        torch.sigmoid(outputs.au_logits.detach().double()).cpu()
        if outputs.au_logits is not None
        else None
    )
    records = []
    for i, ref in enumerate(image_refs):
        records.append(
            PredictionRecord(
                image_ref=ref,
                valence=float(va[i, 0]) if va is not None else None,
                arousal=float(va[i, 1]) if va is not None else None,
                expr_probs=tuple(float(p) for p in expr[i]) if expr is not None else None,
                au_probs=tuple(float(p) for p in au[i]) if au is not None else None,
            )
        )
    return records


def save_checkpoint(
    model: AffectModel,
    preprocess: PreprocessConfig,
    path: str | Path,
) -> Path:
    """Write weights to `path` and an assembly/preprocess sidecar to `path`.json."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), path)
    sidecar = {
        "assembly": {
            "mode": model.assembly.mode,
            "backbone": asdict(model.assembly.backbone),
        },
        "preprocess": asdict(preprocess),
    }
    sidecar_path = path.with_suffix(path.suffix + ".json")
    sidecar_path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path: str | Path) -> tuple[AffectModel, PreprocessConfig]:
    """Rebuild a model from weights plus its JSON sidecar."""
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise FileNotFoundError(f"checkpoint sidecar missing: {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    backbone = BackboneSpec(
        name=sidecar["assembly"]["backbone"]["name"],
        embedding_dim=sidecar["assembly"]["backbone"]["embedding_dim"],
        pretrained=False,
    )
    assembly = ModelAssembly(mode=sidecar["assembly"]["mode"], backbone=backbone)
    model = AffectModel(assembly)
    state = torch.load(path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    pp = sidecar["preprocess"]
    preprocess = PreprocessConfig(
        image_size=pp["image_size"], mean=tuple(pp["mean"]), std=tuple(pp["std"])
    )
    return model, preprocess
