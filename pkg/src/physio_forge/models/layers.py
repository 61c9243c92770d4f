"""Small parameter containers built on the autodiff ops."""

from __future__ import annotations

from typing import Callable, Iterator, Sequence

import numpy as np

from ..autodiff import ops
from ..autodiff.norm import NormState, batch_norm
from ..autodiff.tensor import Tensor


class Module:
    """Tree of named sub-modules, tensors and normalization states."""

    def children(self) -> dict[str, "Module"]:
        return {k: v for k, v in vars(self).items() if isinstance(v, Module)}

    def own_tensors(self) -> dict[str, Tensor]:
        return {k: v for k, v in vars(self).items() if isinstance(v, Tensor)}

    def own_norms(self) -> dict[str, NormState]:
        return {k: v for k, v in vars(self).items() if isinstance(v, NormState)}

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self.own_tensors().items():
            if t.requires_grad:
                yield prefix + name, t
        for name, norm in self.own_norms().items():
            if norm.affine:
                yield f"{prefix}{name}.scale", norm.scale
                yield f"{prefix}{name}.shift", norm.shift
        for name, child in self.children().items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_norms(self, prefix: str = "") -> Iterator[tuple[str, NormState]]:
        for name, norm in self.own_norms().items():
            yield prefix + name, norm
        for name, child in self.children().items():
            yield from child.named_norms(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.parameters()))

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data for name, t in self.named_parameters()}
        for name, norm in self.named_norms():
            state[f"{name}.running_mean"] = norm.running_mean
            state[f"{name}.running_var"] = norm.running_var
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        params = dict(self.named_parameters())
        norms = dict(self.named_norms())
        for name, value in state.items():
            if name in params:
                if params[name].shape != value.shape:
                    raise ValueError(f"{name}: shape {value.shape} != {params[name].shape}")
                params[name].data[...] = value
            else:
                norm_name, attr = name.rsplit(".", 1)
                setattr(norms[norm_name], attr, np.array(value, dtype=np.float64))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0):
        self.weight = Tensor(rng.normal(0.0, gain / np.sqrt(n_in), size=(n_in, n_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class ConvBlock(Module):
    """conv 3x3 -> batch norm -> ReLU -> 2x2 average pool."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv = Tensor(rng.normal(0.0, np.sqrt(2.0 / (9 * c_in)), size=(9 * c_in, c_out)), requires_grad=True)
        self.bn = NormState(c_out, affine=True)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.avg_pool2(ops.relu(batch_norm(ops.conv3x3(x, self.conv), self.bn, training)))


class BlockList(Module):
    def __init__(self, blocks: Sequence[ConvBlock]):
        self.blocks = list(blocks)

    def children(self) -> dict[str, Module]:
        return {str(i): b for i, b in enumerate(self.blocks)}

    def __len__(self) -> int:
        return len(self.blocks)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        for block in self.blocks:
            x = block(x, training)
        return x


class TaskDict(Module):
    """One sub-module per task id."""

    def __init__(self, items: dict[str, Module]):
        self.items = dict(items)

    def children(self) -> dict[str, Module]:
        return dict(self.items)

    def __getitem__(self, task: str) -> Module:
        return self.items[task]


def route(x: Tensor, tasks: np.ndarray, fn: Callable[[str, Tensor], Tensor]) -> Tensor:
    """Apply ``fn(task, rows)`` to each task's rows and restore the original order."""
    tasks = np.asarray(tasks)
    present = [t for t in dict.fromkeys(tasks.tolist())]
    if len(present) == 1:
        return fn(present[0], x)
    parts, order = [], []
    for task in present:
        idx = np.flatnonzero(tasks == task)
        parts.append(fn(task, ops.take_rows(x, idx)))
        order.append(idx)
    inverse = np.argsort(np.concatenate(order), kind="stable")
    return ops.take_rows(ops.concat(parts, axis=0), inverse)
