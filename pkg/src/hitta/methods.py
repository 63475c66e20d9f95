"""Method registry: how each evaluated method composes the two stages.

Every method is a recipe over the same building blocks, so baselines and
ablations run under the exact TTA setting of the full method (same
augmented batch, same statistics handling) with individual ingredients
switched off:

  no_tta                source model as-is (stored statistics, no updates)
  tbn                   batch statistics from the augmented batch, no learning
  tent                  entropy minimization on the normalization affines
  hitta                 disagreement minimization + human-feedback stage
  hitta_no_div          feedback stage only (statistics still from the batch)
  hitta_no_hf           disagreement minimization only
  hitta_entropy_weight  full method, feedback weighted by entropy not disagreement
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .config import ALL_METHODS, RunConfig
from .errors import ConfigError
from .feedback_adapt import PostAdaptConfig
from .pre_adapt import PreAdaptConfig


@dataclass(frozen=True)
class MethodSpec:
    """Which ingredients a method turns on."""

    name: str
    batch_stats: bool       # recompute normalization statistics from the augmented batch
    pre_steps: bool         # run gradient steps in the pre-inference stage
    pre_objective: str      # "divergence" | "entropy"
    feedback: bool          # run the human-feedback stage
    weight_mode: str        # feedback weighting: "mdiv" | "entropy" | "none"


_REGISTRY: dict[str, MethodSpec] = {
    spec.name: spec
    for spec in (
        MethodSpec("no_tta", batch_stats=False, pre_steps=False, pre_objective="divergence",
                   feedback=False, weight_mode="mdiv"),
        MethodSpec("tbn", batch_stats=True, pre_steps=False, pre_objective="divergence",
                   feedback=False, weight_mode="mdiv"),
        MethodSpec("tent", batch_stats=True, pre_steps=True, pre_objective="entropy",
                   feedback=False, weight_mode="mdiv"),
        MethodSpec("hitta", batch_stats=True, pre_steps=True, pre_objective="divergence",
                   feedback=True, weight_mode="mdiv"),
        MethodSpec("hitta_no_div", batch_stats=True, pre_steps=False, pre_objective="divergence",
                   feedback=True, weight_mode="mdiv"),
        MethodSpec("hitta_no_hf", batch_stats=True, pre_steps=True, pre_objective="divergence",
                   feedback=False, weight_mode="mdiv"),
        MethodSpec("hitta_entropy_weight", batch_stats=True, pre_steps=True,
                   pre_objective="divergence", feedback=True, weight_mode="entropy"),
    )
}

assert set(_REGISTRY) == set(ALL_METHODS)  # dispatch is total over declared names


def resolve_method(name: str) -> MethodSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown method {name!r}; registry has {sorted(_REGISTRY)}") from None


def stage_configs(spec: MethodSpec, run: RunConfig) -> tuple[PreAdaptConfig, PostAdaptConfig | None]:
    """Specialize the run's stage configs to one method's recipe.

    The pre config always exists (with steps=0 for non-learning methods, so
    statistics handling and the final forward pass stay identical across
    methods); the post config is None for methods without feedback.
    """
    pre = dataclasses.replace(
        run.pre,
        steps=run.pre.steps if spec.pre_steps else 0,
        objective=spec.pre_objective,
    )
    post = dataclasses.replace(run.post, weight_mode=spec.weight_mode) if spec.feedback else None
    return pre, post
