"""
Run configuration
====================================
Nested configuration dictionaries with flattened ``section__key`` access, and the reader
for flat ``key = value`` configuration files used by the command line.

A config file mirrors the command line flags. Keys may be written flat (``alpha_max = 100``)
or scoped (``solver__alpha_max = 100``); dashes are read as underscores. Lines starting
with ``#`` are comments.

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
from collections import OrderedDict
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple, Union

FlatDict = Dict[str, Any]
ConfigValue = Union[int, float, bool, str, 'RecursiveDict']


class ConfigError(ValueError):
    pass


class RecursiveDict(OrderedDict):
    """
    A data structure that provides an interface to access nested dictionaries with "flattened keys".

    e.g.
        dct = RecursiveDict({'solver': {'rho': 1.05}})
        assert dct["solver__rho"] == 1.05
        dct["solver__alpha_max"] = 10.0
        assert dct['solver']['alpha_max'] == dct.to_flat_dict()["solver__alpha_max"]
    """
    DEFAULT_SEPARATOR: str = '__'

    def __init__(self, *args, separator: str = None, **kwds):
        if separator is None:
            if len(args) == 1 and isinstance(args[0], RecursiveDict) and len(kwds) == 0:
                separator = args[0].separator
            else:
                separator = self.DEFAULT_SEPARATOR
        self.separator = separator

        OrderedDict.__init__(self)
        for arg in args:
            self.update(arg)
        self.update(kwds)

    def same_class_new_instance(self, *args, **kwds) -> 'RecursiveDict':
        return type(self)(*args, separator=self.separator, **kwds)

    def update(self, *args, **kwds):
        # OrderedDict.update bypasses __setitem__ on some paths.
        for arg in args:
            items = arg.items() if isinstance(arg, Mapping) else arg
            for k, v in items:
                self[k] = v
        for k, v in kwds.items():
            self[k] = v

    def get(self, key: str, default: Any = None) -> ConfigValue:
        try:
            return self[key]
        except KeyError:
            return default

    def __getitem__(self, key: str) -> ConfigValue:
        lkey, _, rkey = key.partition(self.separator)
        rec_dict = OrderedDict.__getitem__(self, lkey)
        if rkey == "":
            return rec_dict
        if not isinstance(rec_dict, RecursiveDict):
            raise KeyError(key)
        return rec_dict[rkey]

    def __setitem__(self, key: str, value: ConfigValue):
        lkey, _, rkey = key.partition(self.separator)
        if rkey == "":
            if isinstance(value, dict) and not isinstance(value, RecursiveDict):
                value = self.same_class_new_instance(value.items())
            OrderedDict.__setitem__(self, lkey, value)
        else:
            if lkey not in self.keys():
                OrderedDict.__setitem__(self, lkey, self.same_class_new_instance())
            self[lkey][rkey] = value

    def __contains__(self, key: str) -> bool:
        try:
            _ = self[key]
            return True
        except KeyError:
            return False

    def iter_flat(self, pre_key: str = "") -> Iterable[Tuple[str, Any]]:
        """
        Yields (flattened_key, value) pairs, sorted by key. value is never a RecursiveDict.
        """
        for k, v in sorted(self.items()):
            if isinstance(v, RecursiveDict):
                yield from v.iter_flat(pre_key + k + self.separator)
            else:
                yield pre_key + k, v

    def to_flat_dict(self) -> FlatDict:
        return OrderedDict(self.iter_flat())

    def to_nested_dict(self) -> Dict[str, Any]:
        out_dict = dict()
        for k, v in self.items():
            if isinstance(v, RecursiveDict):
                v = v.to_nested_dict()
            out_dict[k] = v
        return out_dict


SOLVER_KEYS = (
    'alpha0', 'rho', 'alpha_max', 'r_margin', 'max_iter', 'primal_tol', 'step_tol', 'seed',
    'x_tol', 'x_residual_every', 'log_every',
)
BASELINE_KEYS = ('inner_iters',)
PROBLEM_KEYS = (
    'm', 'n', 'q', 'epsilon', 'sigma', 'delta', 'a_min_sv', 'a_max_sv', 'loss_min_sv', 'loss_max_sv',
    'init',
)
EXPERIMENT_KEYS = (
    'input', 'phantom', 'kernel_size', 'kernel_width', 'noise_std', 'sigma_reg', 'tikhonov_start', 'algo',
    'repeats', 'n_jobs', 'trace', 'out', 'report', 'qs',
)
SECTIONS: Dict[str, Tuple[str, ...]] = OrderedDict([
    ('solver', SOLVER_KEYS),
    ('baseline', BASELINE_KEYS),
    ('problem', PROBLEM_KEYS),
    ('experiment', EXPERIMENT_KEYS),
])

# Flag names that differ from their config keys.
KEY_ALIASES: Dict[str, str] = {
    'tol': 'primal_tol',
}


class ConfigDict(RecursiveDict):
    """
    Configuration tree with one section per consumer: ``solver``, ``baseline``, ``problem``
    and ``experiment``. Flat keys are routed to their section on insertion.
    Keys used by several sections (``q``, ``epsilon``, ``seed``) are shared through the
    ``problem`` and ``solver`` sections.

    .. seealso::
        :func:`read_config_file`,
        :class:`~ilradmm.solver.SolverConfig`,
        :class:`~ilradmm.experiments.deblur.ExperimentConfig`
    """

    def set_flat(self, key: str, value: Any) -> 'ConfigDict':
        """
        Store a value given either a flat or a scoped key.

        :param key: ``alpha_max``, ``alpha-max`` or ``solver__alpha_max``
        :param value: value to store
        :return: self
        """
        self[route_key(key, self.separator)] = value
        return self

    def section(self, name: str) -> FlatDict:
        if name not in SECTIONS:
            raise ConfigError(f"Unknown config section `{name}`. Known sections: {list(SECTIONS)}.")
        sub = OrderedDict.get(self, name)
        if sub is None:
            return {}
        return dict(sub.to_flat_dict())

    def overridden_by(self, other: Mapping[str, Any]) -> 'ConfigDict':
        """
        Returns a copy where every non-None value of ``other`` replaces the current one.
        Used to let command line flags override a config file.
        """
        out = ConfigDict(self.to_flat_dict())
        for k, v in other.items():
            if v is not None:
                out.set_flat(k, v)
        return out


def route_key(key: str, separator: str = RecursiveDict.DEFAULT_SEPARATOR) -> str:
    """
    Map a flat or scoped key to its scoped ``section__key`` form.

    :raises ConfigError: when the key belongs to no section
    """
    key = key.strip().replace('-', '_')
    section, sep, leaf = key.partition(separator)
    if sep:
        leaf = KEY_ALIASES.get(leaf, leaf)
        if section not in SECTIONS or leaf not in SECTIONS[section]:
            raise ConfigError(f"Unknown config key `{key}`.")
        return f"{section}{separator}{leaf}"

    key = KEY_ALIASES.get(key, key)
    for section, keys in SECTIONS.items():
        if key in keys:
            return f"{section}{separator}{key}"
    raise ConfigError(f"Unknown config key `{key}`.")


def coerce_value(raw: str) -> Any:
    """
    Parse a config file value: booleans, ints, floats, else the stripped string.
    """
    value = raw.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in ('"', "'"):
        return value[1:-1]
    lowered = value.lower()
    if lowered in ('true', 'yes', 'on'):
        return True
    if lowered in ('false', 'no', 'off'):
        return False
    if lowered in ('none', 'null', ''):
        return None
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def parse_config_text(text: str, source: str = "<string>") -> ConfigDict:
    """
    Parse flat ``key = value`` text into a :class:`ConfigDict`.

    :raises ConfigError: on a line with no ``=`` or an unknown key, naming the line number
    """
    config = ConfigDict()
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split('#', 1)[0].strip()
        if stripped == "":
            continue
        key, sep, value = stripped.partition('=')
        if not sep:
            raise ConfigError(f"{source}:{line_no}: expected `key = value`, got `{line.strip()}`.")
        try:
            config.set_flat(key, coerce_value(value))
        except ConfigError as e:
            raise ConfigError(f"{source}:{line_no}: {e}") from e
    return config


def read_config_file(path: Optional[str]) -> ConfigDict:
    if path is None:
        return ConfigDict()
    with open(path, 'r') as f:
        return parse_config_text(f.read(), source=path)
