"""Parameter storage, activations, exact gradients and Adam.

Backed by torch autograd in float64. Constrained parameters are stored raw and
exposed through a reparametrization so that optimizer steps can never violate
the constraint: ``nonnegative -> softplus(raw)``, ``positive -> exp(raw)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
import torch
import torch.nn.functional as F

DTYPE = torch.float64
CONSTRAINTS = ("free", "nonnegative", "positive")


class NonFiniteError(FloatingPointError):
    def __init__(self, message: str, name: str | None = None):
        super().__init__(message)
        self.name = name


def inverse_softplus(y: float) -> float:
    return y + math.log(-math.expm1(-y))


@dataclass
class Param:
    raw: torch.Tensor
    constraint: str = "free"

    @property
    def value(self) -> torch.Tensor:
        if self.constraint == "free":
            return self.raw
        if self.constraint == "nonnegative":
            return F.softplus(self.raw)
        return torch.exp(self.raw)

    @property
    def grad(self) -> torch.Tensor | None:
        return self.raw.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.raw.shape)


class ParamStore:
    """Named, shaped parameters with gradient slots.

    ``store[name]`` returns the exposed (constrained) tensor; ``store.raw(name)``
    the underlying leaf tensor the optimizer updates.
    """

    def __init__(self, seed: int | None = 0):
        self._entries: dict[str, Param] = {}
        self._gen = torch.Generator().manual_seed(0 if seed is None else seed)

    # construction -----------------------------------------------------------
    def add(self, name: str, raw: torch.Tensor, constraint: str = "free") -> torch.Tensor:
        if name in self._entries:
            raise KeyError(f"duplicate parameter {name!r}")
        if constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {constraint!r}")
        raw = raw.detach().to(DTYPE).clone().requires_grad_(True)
        self._entries[name] = Param(raw, constraint)
        return self[name]

    def weight(self, name: str, shape: tuple[int, ...], constraint: str = "free") -> torch.Tensor:
        """Glorot-uniform weight matrix ``(fan_out, fan_in)``.

        Constrained weights are centred on an exposed value of 0.5 with the
        same jitter, which keeps hidden units distinguishable.
        """
        fan_out, fan_in = shape[0], shape[-1]
        a = math.sqrt(6.0 / (fan_in + fan_out))
        u = (torch.rand(shape, generator=self._gen, dtype=DTYPE) * 2 - 1) * a
        if constraint == "nonnegative":
            u = u + inverse_softplus(0.5)
        elif constraint == "positive":
            u = u + math.log(0.5)
        return self.add(name, u, constraint)

    def bias(self, name: str, size: int | tuple[int, ...], constraint: str = "free") -> torch.Tensor:
        return self.constant(name, size, 0.0 if constraint == "free" else 0.5, constraint)

    def constant(self, name: str, shape: int | tuple[int, ...], value: float,
                 constraint: str = "free") -> torch.Tensor:
        """Parameter whose exposed value starts at ``value`` everywhere."""
        if constraint == "nonnegative":
            raw = inverse_softplus(value)
        elif constraint == "positive":
            raw = math.log(value)
        else:
            raw = value
        return self.add(name, torch.full(_shape(shape), raw, dtype=DTYPE), constraint)

    # access -------------------------------------------------------------------
    def __getitem__(self, name: str) -> torch.Tensor:
        return self._entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, name: str) -> Param:
        return self._entries[name]

    def raw(self, name: str) -> torch.Tensor:
        return self._entries[name].raw

    def raw_tensors(self) -> list[torch.Tensor]:
        return [p.raw for p in self._entries.values()]

    def grads(self) -> dict[str, torch.Tensor]:
        return {n: (p.raw.grad if p.raw.grad is not None else torch.zeros_like(p.raw))
                for n, p in self._entries.items()}

    def num_scalars(self) -> int:
        return sum(p.raw.numel() for p in self._entries.values())

    def zero_grad(self) -> None:
        for p in self._entries.values():
            p.raw.grad = None

    # state --------------------------------------------------------------------
    def state(self) -> dict[str, torch.Tensor]:
        return {n: p.raw.detach().clone() for n, p in self._entries.items()}

    def load_state(self, state: dict[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for n, p in self._entries.items():
                p.raw.copy_(state[n])

    def to_dict(self) -> dict:
        return {n: {"shape": list(p.shape), "values": p.raw.detach().reshape(-1).tolist(),
                    "constraint": p.constraint}
                for n, p in self._entries.items()}

    def load_dict(self, doc: dict) -> None:
        for n, p in self._entries.items():
            if n not in doc:
                raise KeyError(f"checkpoint is missing parameter {n!r}")
            if list(doc[n]["shape"]) != list(p.shape):
                raise ValueError(f"{n}: checkpoint shape {doc[n]['shape']} != {list(p.shape)}")
            with torch.no_grad():
                p.raw.copy_(torch.tensor(doc[n]["values"], dtype=DTYPE).reshape(p.shape))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def _shape(shape) -> tuple[int, ...]:
    return (shape,) if isinstance(shape, int) else tuple(shape)


# activations -------------------------------------------------------------------

def softplus_scaled(x: torch.Tensor, s: torch.Tensor | float) -> torch.Tensor:
    """``s * log(1 + exp(x / s))``; ``s`` broadcasts against the last axis (per mark)."""
    return s * F.softplus(x / s)


def gumbel_softplus(x: torch.Tensor, alpha: torch.Tensor | float,
                    s: torch.Tensor | float = 1.0) -> torch.Tensor:
    """``[1 - (1 + alpha e^x)^(-1/alpha)] * [1 + softplus_s(x)]``, non-saturating."""
    if not torch.is_tensor(alpha):
        alpha = torch.tensor(alpha, dtype=DTYPE)
    # (1 + a e^x)^(-1/a) = exp(-softplus(x + log a) / a)
    gate = -torch.expm1(-F.softplus(x + torch.log(alpha)) / alpha)
    return gate * (1.0 + softplus_scaled(x, s))


ACTIVATIONS: dict[str, Callable] = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "softmax": lambda x: torch.softmax(x, dim=-1),
    "softplus": F.softplus,
    "exp": torch.exp,
    "log": torch.log,
}


# gradients ---------------------------------------------------------------------

def grad(loss_fn: Callable[[ParamStore], torch.Tensor], params: ParamStore) -> ParamStore:
    """Fill the gradient slots of ``params`` with d loss / d raw value."""
    params.zero_grad()
    loss = loss_fn(params)
    if loss.dim() != 0:
        raise ValueError("loss must be a scalar")
    if not torch.isfinite(loss):
        raise NonFiniteError(f"loss is not finite ({loss.item()})")
    loss.backward()
    for name, g in params.grads().items():
        if not torch.all(torch.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}", name)
    return params


@dataclass
class AdamState:
    optimizer: torch.optim.Adam

    @classmethod
    def fresh(cls, params: ParamStore, lr: float = 1e-3) -> "AdamState":
        return cls(torch.optim.Adam(params.raw_tensors(), lr=lr, betas=(0.9, 0.999), eps=1e-8))


def adam_step(params: ParamStore, lr: float, state: AdamState | None = None) -> AdamState:
    """One bias-corrected Adam update of every raw parameter (gradients must be filled)."""
    if not lr > 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    if state is None:
        state = AdamState.fresh(params, lr)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    return state


def finite_difference_check(loss_fn: Callable[[ParamStore], torch.Tensor], params: ParamStore,
                            h: float = 1e-4, floor: float = 1e-6,
                            analytic: dict[str, torch.Tensor] | None = None) -> dict[str, float]:
    """Max relative error per parameter between analytic and central-difference gradients.

    The step is scaled per coordinate, ``h * max(1, |x|)``. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if analytic is None:
        grad(loss_fn, params)
        analytic = {n: g.clone() for n, g in params.grads().items()}
    errors = {}
    with torch.no_grad():
        for name in params:
            raw = params.raw(name)
            flat = raw.view(-1)
            a = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.numel()):
                x0 = flat[i].item()
                step = h * max(1.0, abs(x0))
                flat[i] = x0 + step
                up = loss_fn(params).item()
                flat[i] = x0 - step
                down = loss_fn(params).item()
                flat[i] = x0
                num = (up - down) / (2 * step)
                ai = a[i].item()
                if not (math.isfinite(num) and math.isfinite(ai)):
                    worst = math.inf
                    continue
                worst = max(worst, abs(ai - num) / max(abs(ai), abs(num), floor))
            errors[name] = worst
    return errors


def to_numpy(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().numpy()
