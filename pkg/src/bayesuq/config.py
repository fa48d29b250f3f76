"""Input-file parsing and typed option sections.

An input file is a list of ``key = value`` lines. ``#`` starts a comment
(outside double quotes), blank lines are ignored and values may be bare
numbers, double-quoted strings or space-separated sets::

    env_numSubEnvironments = 8
    env_subDisplayAllowedSet = "0 1"
    ip_mh_rawChainSize = 20000
    ip_mh_rawChainDataOutputFileName = outputData/sip_raw_chain

Options are grouped in sections identified by a key prefix (``env_``,
``ip_``, ``mh_``, ``ml_``, ``infmcmc_``). Prefixes compose: the sampler
options of an inverse problem live under ``ip_mh_``.
"""

from __future__ import annotations

import dataclasses
import difflib
import logging
from dataclasses import dataclass, field
from typing import Iterator

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "InputParseError",
    "OptionsMap",
    "EnvOptions",
    "SipOptions",
    "MhOptions",
    "MlOptions",
    "PcnOptions",
    "SECTIONS",
    "parse_input_file",
    "read_input_file",
    "serialize",
    "resolve",
    "dump_defaults",
    "no_output",
]


class ConfigError(ValueError):
    """Invalid option name, value or combination."""


class InputParseError(ConfigError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


def no_output(name: str) -> bool:
    """File-name options use ``"."`` (or empty) to mean "do not write"."""
    return name in (".", "")


class OptionsMap:
    """Ordered ``key -> raw string value`` map remembering source lines."""

    def __init__(self):
        self._values: dict[str, str] = {}
        self._lines: dict[str, int] = {}

    def set(self, key: str, value: str, lineno: int | None = None) -> None:
        if key in self._values:
            logger.warning(
                "option %s set twice (line %s overrides line %s)",
                key, lineno, self._lines.get(key),
            )
            del self._values[key]
        self._values[key] = value
        self._lines[key] = lineno

    def __getitem__(self, key: str) -> str:
        return self._values[key]

    def get(self, key, default=None):
        return self._values.get(key, default)

    def __contains__(self, key) -> bool:
        return key in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def items(self):
        return self._values.items()

    def line_of(self, key: str) -> int | None:
        return self._lines.get(key)

    def to_dict(self) -> dict[str, str]:
        return dict(self._values)

    def __eq__(self, other):
        if not isinstance(other, OptionsMap):
            return NotImplemented
        return list(self._values.items()) == list(other._values.items())

    def __repr__(self):
        return f"OptionsMap({self._values!r})"


def _split_value(raw: str, lineno: int) -> str:
    """Strip an unquoted trailing comment and surrounding quotes."""
    out = []
    in_quotes = False
    for ch in raw:
        if ch == '"':
            in_quotes = not in_quotes
        elif ch == "#" and not in_quotes:
            break
        out.append(ch)
    if in_quotes:
        raise InputParseError(lineno, "unterminated quoted string")
    value = "".join(out).strip()
    if len(value) >= 2 and value[0] == '"' and value[-1] == '"':
        inner = value[1:-1]
        if '"' in inner:
            raise InputParseError(lineno, f"stray quote in value {value!r}")
        return inner
    if '"' in value:
        raise InputParseError(lineno, f"stray quote in value {value!r}")
    return value


def parse_input_file(text: str) -> OptionsMap:
    """Parse input-file text into an :class:`OptionsMap`."""
    opts = OptionsMap()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, rest = stripped.partition("=")
        key = key.strip()
        if not sep:
            raise InputParseError(lineno, f"expected 'key = value', got {stripped!r}")
        if not key or any(c.isspace() for c in key) or '"' in key or "#" in key:
            raise InputParseError(lineno, f"invalid option name {key!r}")
        opts.set(key, _split_value(rest, lineno), lineno)
    return opts


def read_input_file(path) -> OptionsMap:
    with open(path) as fh:
        return parse_input_file(fh.read())


def _format_raw(value: str) -> str:
    if value == "" or any(c in value for c in ' \t#"=') :
        return f'"{value}"'
    return value


def serialize(opts: OptionsMap) -> str:
    """Canonical text form; ``parse_input_file(serialize(m)) == m``."""
    return "".join(f"{k} = {_format_raw(v)}\n" for k, v in opts.items())


# -- typed sections ---------------------------------------------------------

def _opt(key: str, kind: str, default):
    meta = {"key": key, "kind": kind}
    if isinstance(default, (list, tuple)):
        return field(default=tuple(default), metadata=meta)
    return field(default=default, metadata=meta)


def _convert(kind: str, raw: str, key: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "flag":
            v = int(raw)
            if v not in (0, 1):
                raise ValueError
            return v
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw
        if kind == "set":
            return tuple(int(v) for v in raw.split())
        if kind == "floats":
            return tuple(float(v) for v in raw.split())
    except ValueError:
        expected = {"flag": "0 or 1", "set": "space-separated integers",
                    "floats": "space-separated reals"}.get(kind, kind)
        raise ConfigError(f"{key}: expected {expected}, got {raw!r}") from None
    raise AssertionError(kind)


def _format_typed(kind: str, value) -> str:
    if kind in ("set", "floats"):
        return " ".join(repr(v) if kind == "floats" else str(v) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


@dataclass(frozen=True)
class _Section:
    sources: dict = field(default_factory=dict, compare=False, repr=False, kw_only=True)

    def source_of(self, name: str) -> int | None:
        """Input-file line that set attribute ``name`` (``None`` for defaults)."""
        return self.sources.get(name)

    @classmethod
    def option_fields(cls):
        return [f for f in dataclasses.fields(cls) if "key" in f.metadata]


@dataclass(frozen=True)
class EnvOptions(_Section):
    help: str = _opt("help", "str", "")
    num_sub_environments: int = _opt("numSubEnvironments", "int", 1)
    sub_display_file_name: str = _opt("subDisplayFileName", "str", ".")
    sub_display_allow_all: int = _opt("subDisplayAllowAll", "flag", 0)
    sub_display_allowed_set: tuple = _opt("subDisplayAllowedSet", "set", ())
    display_verbosity: int = _opt("displayVerbosity", "int", 0)
    sync_verbosity: int = _opt("syncVerbosity", "int", 0)
    seed: int = _opt("seed", "int", 0)

    def __post_init__(self):
        if self.num_sub_environments < 1:
            raise ConfigError("env_numSubEnvironments must be >= 1")
        if self.display_verbosity < 0:
            raise ConfigError("env_displayVerbosity must be >= 0")


@dataclass(frozen=True)
class SipOptions(_Section):
    help: str = _opt("help", "str", "")
    compute_solution: int = _opt("computeSolution", "flag", 1)
    data_output_file_name: str = _opt("dataOutputFileName", "str", ".")
    data_output_allowed_set: tuple = _opt("dataOutputAllowedSet", "set", ())


@dataclass(frozen=True)
class MhOptions(_Section):
    """Delayed-rejection adaptive Metropolis settings.

    ``dr_scales`` holds the proposal shrink factor of each extra stage; the
    table default ``0`` means "unset", in which case stage ``k`` uses
    ``5**k`` (see :meth:`stage_scales`).
    """

    data_output_file_name: str = _opt("dataOutputFileName", "str", ".")
    data_output_allow_all: int = _opt("dataOutputAllowAll", "flag", 0)
    initial_position_data_input_file_name: str = _opt("initialPositionDataInputFileName", "str", ".")
    initial_position_data_input_file_type: str = _opt("initialPositionDataInputFileType", "str", "m")
    initial_proposal_cov_matrix_data_input_file_name: str = _opt(
        "initialProposalCovMatrixDataInputFileName", "str", ".")
    initial_proposal_cov_matrix_data_input_file_type: str = _opt(
        "initialProposalCovMatrixDataInputFileType", "str", "m")
    raw_chain_data_input_file_name: str = _opt("rawChainDataInputFileName", "str", ".")
    raw_chain_data_input_file_type: str = _opt("rawChainDataInputFileType", "str", "m")
    raw_chain_size: int = _opt("rawChainSize", "int", 100)
    raw_chain_generate_extra: int = _opt("rawChainGenerateExtra", "flag", 0)
    raw_chain_display_period: int = _opt("rawChainDisplayPeriod", "int", 500)
    raw_chain_measure_run_times: int = _opt("rawChainMeasureRunTimes", "flag", 1)
    raw_chain_data_output_period: int = _opt("rawChainDataOutputPeriod", "int", 0)
    raw_chain_data_output_file_name: str = _opt("rawChainDataOutputFileName", "str", ".")
    raw_chain_data_output_file_type: str = _opt("rawChainDataOutputFileType", "str", "m")
    raw_chain_data_output_allow_all: int = _opt("rawChainDataOutputAllowAll", "flag", 0)
    filtered_chain_generate: int = _opt("filteredChainGenerate", "flag", 0)
    filtered_chain_discarded_portion: float = _opt("filteredChainDiscardedPortion", "float", 0.0)
    filtered_chain_lag: int = _opt("filteredChainLag", "int", 1)
    filtered_chain_data_output_file_name: str = _opt("filteredChainDataOutputFileName", "str", ".")
    filtered_chain_data_output_file_type: str = _opt("filteredChainDataOutputFileType", "str", "m")
    filtered_chain_data_output_allow_all: int = _opt("filteredChainDataOutputAllowAll", "flag", 0)
    display_candidates: int = _opt("displayCandidates", "flag", 0)
    put_out_of_bounds_in_chain: int = _opt("putOutOfBoundsInChain", "flag", 1)
    tk_use_local_hessian: int = _opt("tkUseLocalHessian", "flag", 0)
    tk_use_newton_component: int = _opt("tkUseNewtonComponent", "flag", 1)
    dr_max_num_extra_stages: int = _opt("drMaxNumExtraStages", "int", 0)
    dr_scales: tuple = _opt("drScalesForExtraStages", "floats", (0.0,))
    dr_during_am_non_adaptive_int: int = _opt("drDuringAmNonAdaptiveInt", "flag", 1)
    am_keep_initial_matrix: int = _opt("amKeepInitialMatrix", "flag", 0)
    am_init_non_adapt_interval: int = _opt("amInitialNonAdaptInterval", "int", 0)
    am_adapt_interval: int = _opt("amAdaptInterval", "int", 0)
    am_adapted_matrices_data_output_period: int = _opt("amAdaptedMatricesDataOutputPeriod", "int", 0)
    am_adapted_matrices_data_output_file_name: str = _opt(
        "amAdaptedMatricesDataOutputFileName", "str", ".")
    am_adapted_matrices_data_output_file_type: str = _opt(
        "amAdaptedMatricesDataOutputFileType", "str", "m")
    am_adapted_matrices_data_output_allow_all: int = _opt(
        "amAdaptedMatricesDataOutputAllowAll", "flag", 0)
    am_eta: float = _opt("amEta", "float", 1.0)
    am_epsilon: float = _opt("amEpsilon", "float", 1e-5)
    brooks_gelman_monitor: int = _opt("enableBrooksGelmanConvMonitor", "flag", 0)
    brooks_gelman_lag: int = _opt("BrooksGelmanLag", "int", 100)

    def __post_init__(self):
        if self.raw_chain_size < 1:
            raise ConfigError("rawChainSize must be >= 1")
        if self.raw_chain_display_period < 0 or self.raw_chain_data_output_period < 0:
            raise ConfigError("display/output periods must be >= 0")
        if not 0.0 <= self.filtered_chain_discarded_portion < 1.0:
            raise ConfigError("filteredChainDiscardedPortion must lie in [0, 1)")
        if self.filtered_chain_lag < 1:
            raise ConfigError("filteredChainLag must be >= 1")
        if self.dr_max_num_extra_stages < 0:
            raise ConfigError("drMaxNumExtraStages must be >= 0")
        if self.am_init_non_adapt_interval < 0 or self.am_adapt_interval < 0:
            raise ConfigError("AM intervals must be >= 0")
        if not self.am_eta > 0 or not self.am_epsilon > 0:
            raise ConfigError("amEta and amEpsilon must be positive")
        if self.brooks_gelman_lag < 1:
            raise ConfigError("BrooksGelmanLag must be >= 1")
        if self.tk_use_local_hessian:
            raise ConfigError("tkUseLocalHessian = 1: Hessian transition kernels not implemented")
        object.__setattr__(self, "dr_scales", tuple(float(s) for s in self.dr_scales))
        self.stage_scales()

    def stage_scales(self) -> tuple[float, ...]:
        """Proposal shrink factor for each delayed-rejection stage."""
        n = self.dr_max_num_extra_stages
        given = tuple(s for s in self.dr_scales if s != 0.0)
        if not given:
            return tuple(5.0 ** k for k in range(1, n + 1))
        if len(given) < n:
            raise ConfigError(
                f"drScalesForExtraStages has {len(given)} entries, {n} extra stages requested"
            )
        scales = given[:n]
        if any(s <= 1.0 for s in scales):
            raise ConfigError("delayed-rejection scales must be > 1")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ConfigError("delayed-rejection scales must be strictly increasing")
        return scales


@dataclass(frozen=True)
class MlOptions(_Section):
    restart_output_level_period: int = _opt("restartOutput_levelPeriod", "int", 0)
    restart_output_base_name_for_files: str = _opt("restartOutput_baseNameForFiles", "str", ".")
    restart_output_file_type: str = _opt("restartOutput_fileType", "str", "m")
    restart_input_base_name_for_files: str = _opt("restartInput_baseNameForFiles", "str", ".")
    restart_input_file_type: str = _opt("restartInput_fileType", "str", "m")
    stop_at_end: int = _opt("stopAtEnd", "flag", 0)
    data_output_file_name: str = _opt("dataOutputFileName", "str", ".")
    data_output_allow_all: int = _opt("dataOutputAllowAll", "flag", 0)
    load_balance_algorithm_id: int = _opt("loadBalanceAlgorithmId", "int", 2)
    load_balance_threshold: float = _opt("loadBalanceTreshold", "float", 1.0)
    min_effective_size_ratio: float = _opt("minEffectiveSizeRatio", "float", 0.85)
    max_effective_size_ratio: float = _opt("maxEffectiveSizeRatio", "float", 0.91)
    scale_cov_matrix: int = _opt("scaleCovMatrix", "flag", 1)
    min_rejection_rate: float = _opt("minRejectionRate", "float", 0.50)
    max_rejection_rate: float = _opt("maxRejectionRate", "float", 0.75)
    cov_rejection_rate: float = _opt("covRejectionRate", "float", 0.25)
    min_acceptable_eta: float = _opt("minAcceptableEta", "float", 0.0)
    totally_mute: int = _opt("totallyMute", "flag", 1)
    initial_position_data_input_file_name: str = _opt("initialPositionDataInputFileName", "str", ".")
    initial_position_data_input_file_type: str = _opt("initialPositionDataInputFileType", "str", "m")
    initial_proposal_cov_matrix_data_input_file_name: str = _opt(
        "initialProposalCovMatrixDataInputFileName", "str", ".")
    initial_proposal_cov_matrix_data_input_file_type: str = _opt(
        "initialProposalCovMatrixDataInputFileType", "str", "m")
    raw_chain_data_input_file_name: str = _opt("rawChainDataInputFileName", "str", ".")
    raw_chain_data_input_file_type: str = _opt("rawChainDataInputFileType", "str", "m")
    raw_chain_size: int = _opt("rawChainSize", "int", 100)
    raw_chain_generate_extra: int = _opt("rawChainGenerateExtra", "flag", 0)
    raw_chain_display_period: int = _opt("rawChainDisplayPeriod", "int", 500)
    raw_chain_measure_run_times: int = _opt("rawChainMeasureRunTimes", "flag", 1)
    raw_chain_data_output_period: int = _opt("rawChainDataOutputPeriod", "int", 0)
    raw_chain_data_output_file_name: str = _opt("rawChainDataOutputFileName", "str", ".")
    raw_chain_data_output_file_type: str = _opt("rawChainDataOutputFileType", "str", "m")
    raw_chain_data_output_allow_all: int = _opt("rawChainDataOutputAllowAll", "flag", 0)
    filtered_chain_generate: int = _opt("filteredChainGenerate", "flag", 0)
    filtered_chain_discarded_portion: float = _opt("filteredChainDiscardedPortion", "float", 0.0)
    filtered_chain_lag: int = _opt("filteredChainLag", "int", 1)
    filtered_chain_data_output_file_name: str = _opt("filteredChainDataOutputFileName", "str", ".")
    filtered_chain_data_output_file_type: str = _opt("filteredChainDataOutputFileType", "str", "m")
    filtered_chain_data_output_allow_all: int = _opt("filteredChainDataOutputAllowAll", "flag", 0)
    display_candidates: int = _opt("displayCandidates", "flag", 0)
    put_out_of_bounds_in_chain: int = _opt("putOutOfBoundsInChain", "flag", 1)
    tk_use_local_hessian: int = _opt("tkUseLocalHessian", "flag", 0)
    tk_use_newton_component: int = _opt("tkUseNewtonComponent", "flag", 1)
    dr_max_num_extra_stages: int = _opt("drMaxNumExtraStages", "int", 0)
    dr_scales: tuple = _opt("drScalesForExtraStages", "floats", (0.0,))
    dr_during_am_non_adaptive_int: int = _opt("drDuringAmNonAdaptiveInt", "flag", 1)
    am_keep_initial_matrix: int = _opt("amKeepInitialMatrix", "flag", 0)
    am_init_non_adapt_interval: int = _opt("amInitialNonAdaptInterval", "int", 0)
    am_adapt_interval: int = _opt("amAdaptInterval", "int", 0)
    am_adapted_matrices_data_output_period: int = _opt("amAdaptedMatricesDataOutputPeriod", "int", 0)
    am_adapted_matrices_data_output_file_name: str = _opt(
        "amAdaptedMatricesDataOutputFileName", "str", ".")
    am_adapted_matrices_data_output_file_type: str = _opt(
        "amAdaptedMatricesDataOutputFileType", "str", "m")
    am_adapted_matrices_data_output_allow_all: int = _opt(
        "amAdaptedMatricesDataOutputAllowAll", "flag", 0)
    am_eta: float = _opt("amEta", "float", 1.0)
    am_epsilon: float = _opt("amEpsilon", "float", 1e-5)

    def __post_init__(self):
        if not 0.0 < self.min_effective_size_ratio <= self.max_effective_size_ratio < 1.0:
            raise ConfigError(
                "need 0 < minEffectiveSizeRatio <= maxEffectiveSizeRatio < 1, got "
                f"{self.min_effective_size_ratio}, {self.max_effective_size_ratio}"
            )
        if not 0.0 <= self.min_rejection_rate <= self.max_rejection_rate <= 1.0:
            raise ConfigError("need 0 <= minRejectionRate <= maxRejectionRate <= 1")
        if not 0.0 <= self.cov_rejection_rate <= 1.0:
            raise ConfigError("covRejectionRate must lie in [0, 1]")
        if self.raw_chain_size < 1:
            raise ConfigError("rawChainSize must be >= 1")
        if self.tk_use_local_hessian:
            raise ConfigError("tkUseLocalHessian = 1: Hessian transition kernels not implemented")


@dataclass(frozen=True)
class PcnOptions(_Section):
    data_output_dir_name: str = _opt("dataOutputDirName", "str", "chain")
    # the option name is spelled this way in the upstream option table
    data_output_file_name: str = _opt("dataOutpuFileName", "str", "out.h5")
    num_iters: int = _opt("num_iters", "int", 1000)
    save_freq: int = _opt("save_freq", "int", 1)
    rwmh_step: float = _opt("rwmh_step", "float", 1e-2)

    def __post_init__(self):
        if self.num_iters < 0:
            raise ConfigError("infmcmc_num_iters must be >= 0")
        if self.save_freq < 1:
            raise ConfigError("infmcmc_save_freq must be >= 1")
        if not 0.0 <= self.rwmh_step <= 1.0:
            raise ConfigError("infmcmc_rwmh_step must lie in [0, 1]")


SECTIONS: dict[str, type[_Section]] = {
    "env_": EnvOptions,
    "ip_": SipOptions,
    "mh_": MhOptions,
    "ml_": MlOptions,
    "infmcmc_": PcnOptions,
}

_ALIASES = {PcnOptions: {"dataOutputFileName": "dataOutpuFileName"}}


def _section_for(prefix: str) -> type[_Section]:
    for sp in sorted(SECTIONS, key=len, reverse=True):
        if prefix.endswith(sp):
            return SECTIONS[sp]
    raise ConfigError(
        f"prefix {prefix!r} does not end with a registered section prefix {sorted(SECTIONS)}"
    )


def resolve(options: OptionsMap | dict, prefix: str):
    """Build the typed option section for ``prefix`` from an options map.

    Keys under ``prefix`` that are not options of the section raise
    :class:`ConfigError`, as do values of the wrong type. Keys belonging to a
    nested section (e.g. ``ip_mh_`` when resolving ``ip_``) are skipped.
    """
    cls = _section_for(prefix)
    if isinstance(options, dict):
        m = OptionsMap()
        for k, v in options.items():
            m.set(k, str(v))
        options = m
    by_key = {f.metadata["key"]: f for f in cls.option_fields()}
    aliases = _ALIASES.get(cls, {})
    nested = tuple(prefix + sp for sp in SECTIONS)
    kwargs, sources = {}, {}
    for key, raw in options.items():
        if not key.startswith(prefix) or key.startswith(nested):
            continue
        suffix = key[len(prefix):]
        suffix = aliases.get(suffix, suffix)
        f = by_key.get(suffix)
        if f is None:
            near = difflib.get_close_matches(suffix, list(by_key), n=1)
            hint = f"; did you mean {prefix + near[0]}?" if near else ""
            raise ConfigError(f"unknown option {key}{hint}")
        kwargs[f.name] = _convert(f.metadata["kind"], raw, key)
        sources[f.name] = options.line_of(key)
    return cls(**kwargs, sources=sources)


def defaults_map(prefix: str) -> OptionsMap:
    cls = _section_for(prefix)
    m = OptionsMap()
    for f in cls.option_fields():
        m.set(prefix + f.metadata["key"], _format_typed(f.metadata["kind"], f.default))
    return m


def dump_defaults() -> str:
    """Every section's defaults in parseable input-file form."""
    parts = []
    for prefix, cls in SECTIONS.items():
        parts.append(f"# {cls.__name__}\n")
        parts.append(serialize(defaults_map(prefix)))
    return "".join(parts)
