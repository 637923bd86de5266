"""Registry of the six pretrained convolutional backbones and the pluggable
weight providers that supply them.

Providers:
  torchvision -- genuine ImageNet-pretrained checkpoints; needs the weight
                 files locally cached or fetchable.
  seeded      -- the same architectures with a deterministic, seeded weight
                 initialization standing in for a checkpoint; for tests,
                 demos, and offline environments.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Callable

import torch
import torch.nn as nn
import torchvision.models as tvm


class BackboneError(ValueError):
    pass


class ProviderError(RuntimeError):
    """Pretrained weights unavailable or provider misconfigured."""


@dataclass(frozen=True)
class InputStats:
    """Channel statistics the checkpoint was trained under."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]


IMAGENET_STATS = InputStats(
    mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225)
)


@dataclass(frozen=True)
class BackboneSpec:
    """Registry entry: architecture name, depth, input size, parameter count,
    and the provider key resolving its pretrained weights."""

    name: str
    depth: int
    input_size: tuple[int, int, int]  # (W, H, D)
    params_millions: float
    provider_key: str

    @property
    def width(self) -> int:
        return self.input_size[0]

    @property
    def height(self) -> int:
        return self.input_size[1]

    @property
    def provider(self) -> str:
        return self.provider_key.split("/", 1)[0]

    @property
    def model_id(self) -> str:
        return self.provider_key.split("/", 1)[1]

    def with_provider(self, provider: str) -> "BackboneSpec":
        if provider not in PROVIDERS:
            raise ProviderError(
                f"unknown provider {provider!r}; available: {sorted(PROVIDERS)}"
            )
        return replace(self, provider_key=f"{provider}/{self.model_id}")


REGISTRY: dict[str, BackboneSpec] = {
    spec.name: spec
    for spec in (
        BackboneSpec("AlexNet", 8, (227, 227, 3), 61.0, "torchvision/alexnet"),
        BackboneSpec("GoogLeNet", 22, (224, 224, 3), 7.0, "torchvision/googlenet"),
        BackboneSpec("Vgg19", 19, (224, 224, 3), 144.0, "torchvision/vgg19"),
        BackboneSpec("Inceptionv3", 48, (299, 299, 3), 23.9, "torchvision/inception_v3"),
        BackboneSpec("ResNet50", 50, (224, 224, 3), 25.6, "torchvision/resnet50"),
        BackboneSpec("SqueezeNet", 18, (227, 227, 3), 1.24, "torchvision/squeezenet1_0"),
    )
}


def registry_names() -> list[str]:
    return list(REGISTRY)


def get_backbone(name: str, provider: str | None = None) -> BackboneSpec:
    try:
        spec = REGISTRY[name]
    except KeyError:
        raise BackboneError(
            f"unknown backbone {name!r}; registry holds: {', '.join(REGISTRY)}"
        ) from None
    return spec.with_provider(provider) if provider else spec


def _construct(model_id: str, weights=None) -> nn.Module:
    """Instantiate the torchvision architecture; aux classifiers disabled."""
    if model_id == "alexnet":
        return tvm.alexnet(weights=weights)
    if model_id == "vgg19":
        return tvm.vgg19(weights=weights)
    if model_id == "resnet50":
        return tvm.resnet50(weights=weights)
    if model_id == "squeezenet1_0":
        return tvm.squeezenet1_0(weights=weights)
    if model_id == "googlenet":
        if weights is None:
            return tvm.googlenet(weights=None, aux_logits=False, init_weights=True)
        return tvm.googlenet(weights=weights, aux_logits=False)
    if model_id == "inception_v3":
        if weights is None:
            return tvm.inception_v3(weights=None, aux_logits=False, init_weights=True)
        return tvm.inception_v3(weights=weights, aux_logits=False)
    raise ProviderError(f"no constructor for model id {model_id!r}")


# How to find and replace the final classification layer of each architecture.
_HEAD_PREFIX: dict[str, str] = {
    "alexnet": "classifier.6",
    "vgg19": "classifier.6",
    "googlenet": "fc",
    "inception_v3": "fc",
    "resnet50": "fc",
    "squeezenet1_0": "classifier.1",
}


def head_param_names(model_id: str) -> tuple[str, str]:
    prefix = _HEAD_PREFIX[model_id]
    return (f"{prefix}.weight", f"{prefix}.bias")


def _get_submodule_parent(module: nn.Module, dotted: str) -> tuple[nn.Module, str]:
    parts = dotted.split(".")
    parent = module
    for part in parts[:-1]:
        parent = parent[int(part)] if part.isdigit() else getattr(parent, part)
    return parent, parts[-1]


def replace_head(
    module: nn.Module, model_id: str, num_outputs: int, head_seed: int
) -> tuple[str, str]:
    """Swap the final classification layer for a fresh one with num_outputs
    outputs: small-variance normal weights, zero bias. Returns the replaced
    parameter names."""
    if num_outputs < 2:
        raise BackboneError(f"classification head needs >= 2 outputs, got {num_outputs}")
    prefix = _HEAD_PREFIX[model_id]
    parent, attr = _get_submodule_parent(module, prefix)
    old = parent[int(attr)] if attr.isdigit() else getattr(parent, attr)

    gen = torch.Generator().manual_seed(head_seed)
    if isinstance(old, nn.Conv2d):
        new: nn.Module = nn.Conv2d(old.in_channels, num_outputs, kernel_size=1)
    elif isinstance(old, nn.Linear):
        new = nn.Linear(old.in_features, num_outputs)
    else:
        raise ProviderError(f"unsupported head layer {type(old).__name__} in {model_id}")
    with torch.no_grad():
        new.weight.copy_(torch.randn(new.weight.shape, generator=gen) * 0.01)
        if isinstance(new, nn.Conv2d):
            # a conv head feeds a ReLU; with zero bias and non-negative input
            # features an unlucky weight draw leaves a class map all-negative
            # and its logit permanently dead, so start every unit alive
            new.bias.fill_(1.0)
        else:
            new.bias.zero_()

    if attr.isdigit():
        parent[int(attr)] = new
    else:
        setattr(parent, attr, new)
    if model_id == "squeezenet1_0":
        module.num_classes = num_outputs
    return head_param_names(model_id)


@dataclass
class LoadedBackbone:
    """Architecture with checkpoint weights applied, before head surgery."""

    spec: BackboneSpec
    module: nn.Module
    checkpoint: dict[str, torch.Tensor]
    input_stats: InputStats


def _seeded_load(spec: BackboneSpec) -> nn.Module:
    entropy = hashlib.sha256(spec.model_id.encode("utf-8")).digest()
    seed = int.from_bytes(entropy[:4], "big")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return _construct(spec.model_id)


def _torchvision_load(spec: BackboneSpec) -> nn.Module:
    try:
        return _construct(spec.model_id, weights="DEFAULT")
    except Exception as exc:
        url = ""
        try:
            url = tvm.get_model_weights(spec.model_id).DEFAULT.url
        except Exception:
            pass
        raise ProviderError(
            f"pretrained weights for {spec.name} ({spec.model_id}) are not "
            f"available: {exc}. Download {url or 'the checkpoint'} into "
            f"$TORCH_HOME/hub/checkpoints (default ~/.cache/torch/hub/checkpoints) "
            f"on a connected machine, or select the 'seeded' provider."
        ) from exc


PROVIDERS: dict[str, Callable[[BackboneSpec], nn.Module]] = {
    "seeded": _seeded_load,
    "torchvision": _torchvision_load,
}


def load_backbone(spec: BackboneSpec) -> LoadedBackbone:
    """Resolve the provider key and return the checkpoint-initialized module
    together with a reference copy of the checkpoint tensors."""
    try:
        loader = PROVIDERS[spec.provider]
    except KeyError:
        raise ProviderError(
            f"unknown provider {spec.provider!r} in key {spec.provider_key!r}; "
            f"available: {sorted(PROVIDERS)}"
        ) from None
    module = loader(spec)
    checkpoint = {k: v.detach().clone() for k, v in module.state_dict().items()}
    return LoadedBackbone(
        spec=spec, module=module, checkpoint=checkpoint, input_stats=IMAGENET_STATS
    )
