"""
Iterate traces
====================================
Per-iteration records written by every solver run.

..
    Copyright 2022, The ilradmm developers.

    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        http://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.

"""
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Iterator, List, Sequence

import numpy as np
import pandas as pd

CSV_COLUMNS = (
    'iter', 'alpha', 'r', 'lagrangian', 'primal_residual', 'step_x', 'step_y', 'dual_step',
    'kkt', 'weight_min', 'weight_max', 'snr',
)


class RunStatus(Enum):
    RUNNING = "running"
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    DIVERGED = "diverged"
    FAILED = "failed"


@dataclass
class IterateRow:
    """
    One step ``d^k -> d^{k+1}``. ``alpha`` and ``r`` are the values used by the step, and
    ``lagrangian`` is ``L_alpha(d^{k+1})`` at that same ``alpha``.
    """
    iter: int
    alpha: float
    r: float
    lagrangian: float
    primal_residual: float
    step_x: float
    step_y: float
    dual_step: float
    kkt: float = float('nan')
    weight_min: float = float('nan')
    weight_max: float = float('nan')
    snr: float = float('nan')
    x_residual: float = float('nan')
    x_norm: float = float('nan')
    ratio: float = float('nan')
    dual_norm: float = float('nan')
    grad_norm: float = float('nan')
    iterate_norm: float = float('nan')
    n_clamped: int = 0

    @property
    def step_z(self) -> float:
        return float(np.hypot(self.step_x, self.step_y))

    def is_finite(self) -> bool:
        return all(np.isfinite(getattr(self, name)) for name in CSV_COLUMNS[:8])


ROW_COLUMNS = tuple(f.name for f in fields(IterateRow))


@dataclass
class IterateTrace:
    """
    Rows of a run plus run-level facts: the initial Lagrangian value and whether the initial point
    satisfies ``grad f(x^0) = -A^T p^0``, the running maximum ``tau_hat`` of the relative-error ratio,
    the total count of clamped weights, the final status and the wall-clock time.
    """
    algorithm: str = 'ilr'
    rows: List[IterateRow] = field(default_factory=list)
    initial_lagrangian: float = float('nan')
    initial_alpha: float = float('nan')
    initial_dual_consistent: bool = False
    tau_hat: float = 0.0
    n_clamped: int = 0
    status: RunStatus = RunStatus.RUNNING
    elapsed: float = 0.0

    def append(self, row: IterateRow) -> 'IterateTrace':
        self.rows.append(row)
        if np.isfinite(row.ratio):
            self.tau_hat = max(self.tau_hat, row.ratio)
        self.n_clamped += row.n_clamped
        return self

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[IterateRow]:
        return iter(self.rows)

    def __getitem__(self, item) -> IterateRow:
        return self.rows[item]

    def column(self, name: str) -> np.ndarray:
        if name not in ROW_COLUMNS:
            raise KeyError(f"Unknown trace column `{name}`.")
        return np.array([getattr(row, name) for row in self.rows], dtype=float)

    def total_step_length(self) -> float:
        """
        Returns ``sum_k ||z^{k+1} - z^k||``.
        """
        return float(np.sum([row.step_z for row in self.rows]))

    def last(self) -> IterateRow:
        if not self.rows:
            raise IndexError("Empty trace.")
        return self.rows[-1]

    def to_dataframe(self, columns: Sequence[str] = CSV_COLUMNS) -> pd.DataFrame:
        records = [asdict(row) for row in self.rows]
        df = pd.DataFrame.from_records(records, columns=list(ROW_COLUMNS))
        df = df[list(columns)]
        if 'iter' in df.columns:
            df['iter'] = df['iter'].astype(int)
        return df

    @staticmethod
    def from_dataframe(df: pd.DataFrame, algorithm: str = 'ilr') -> 'IterateTrace':
        trace = IterateTrace(algorithm=algorithm)
        for record in df.to_dict(orient='records'):
            kwargs = {k: v for k, v in record.items() if k in ROW_COLUMNS}
            kwargs['iter'] = int(kwargs['iter'])
            trace.append(IterateRow(**kwargs))
        return trace

    def summary(self) -> dict:
        out = {
            'algorithm': self.algorithm,
            'status': self.status.value,
            'iterations': len(self.rows),
            'elapsed': self.elapsed,
            'tau_hat': self.tau_hat,
            'n_clamped': self.n_clamped,
            'total_step_length': self.total_step_length(),
            'max_iterate_norm': float(np.max(self.column('iterate_norm'))) if self.rows else float('nan'),
        }
        if self.rows:
            last = self.rows[-1]
            out.update({
                'primal_residual': last.primal_residual,
                'step_z': last.step_z,
                'kkt': last.kkt,
                'snr': last.snr,
            })
        return out
