"""On-disk dataset format: a text manifest plus a raw float32 payload.

Layout (documented byte-exactly in the README):

* ``manifest.txt`` — header lines, one ``var`` line per variable carrying its
  spec and standardization stats, then one ``rec`` line per timestamp with the
  absolute byte offset of its record in the payload.
* ``payload.bin`` — 8 magic bytes ``WSRDBIN1`` followed by fixed-size records.
  A record is the concatenation, in manifest order, of every variable's
  channels as little-endian float32, row-major. Low-resolution variables use
  the high-res shape divided by the scale factor.

Grids are stored in physical units; standardization happens at assembly time
from the stats in the manifest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .grids import (
    ConditioningSet,
    ConditioningVariable,
    FieldGrid,
    SamplePair,
    StandardizationStats,
    VariableSpec,
)

MAGIC = b"WSRDBIN1"
_MANIFEST_HEADER = "WINDSR-DATASET 1"
_NONE_GROUP = "-"


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of sample pairs sharing variables, shape and stats."""

    pairs: tuple[SamplePair, ...]

    def __post_init__(self):
        if not self.pairs:
            raise ValidationError("dataset must contain at least one pair")
        first = self.pairs[0]
        sig = _signature(first)
        for i, p in enumerate(self.pairs):
            if _signature(p) != sig:
                raise FormatError(f"record {i} ({p.timestamp_id!r}) disagrees with dataset signature")

    @property
    def stats(self) -> StandardizationStats:
        return self.pairs[0].stats

    @property
    def scale_factor(self) -> int:
        return self.pairs[0].scale_factor

    @property
    def hr_shape(self) -> tuple[int, int]:
        return self.pairs[0].hr_shape

    def variable_specs(self) -> tuple[VariableSpec, ...]:
        p = self.pairs[0]
        return tuple(v.spec for v in list(p.hr_targets) + list(p.conditioning.variables))

    def dropout_groups(self) -> tuple[str, ...]:
        return self.pairs[0].conditioning.dropout_groups()

    def __len__(self) -> int:
        return len(self.pairs)


def _signature(pair: SamplePair):
    return (
        tuple(v.spec for v in pair.hr_targets),
        tuple(v.spec for v in pair.conditioning.variables),
        pair.hr_shape,
        pair.scale_factor,
    )


def _grid_shape(spec: VariableSpec, hr_shape: tuple[int, int], factor: int) -> tuple[int, int]:
    if spec.resolution == "low":
        return (hr_shape[0] // factor, hr_shape[1] // factor)
    return hr_shape


def _record_nbytes(specs, hr_shape, factor) -> int:
    total = 0
    for spec in specs:
        h, w = _grid_shape(spec, hr_shape, factor)
        total += spec.channels * h * w * 4
    return total


def write_dataset(dataset: Dataset, manifest_path: str) -> None:
    """Write manifest and payload; the payload file sits next to the manifest."""
    manifest_path = os.fspath(manifest_path)
    out_dir = os.path.dirname(os.path.abspath(manifest_path))
    os.makedirs(out_dir, exist_ok=True)
    payload_name = os.path.splitext(os.path.basename(manifest_path))[0] + ".bin"

    specs = dataset.variable_specs()
    for spec in specs:
        for token in (spec.name, spec.dropout_group, spec.units):
            if any(c.isspace() for c in token):
                raise ValidationError(f"whitespace not allowed in manifest token {token!r}")
    hr_shape, factor = dataset.hr_shape, dataset.scale_factor
    record_size = _record_nbytes(specs, hr_shape, factor)

    lines = [
        _MANIFEST_HEADER,
        f"scale_factor {factor}",
        f"hr_height {hr_shape[0]}",
        f"hr_width {hr_shape[1]}",
        f"payload {payload_name}",
        f"variables {len(specs)}",
    ]
    stats = dataset.stats
    for spec in specs:
        group = spec.dropout_group if spec.kind == "input" else _NONE_GROUP
        units = spec.units or _NONE_GROUP
        lines.append(
            f"var {spec.name} {spec.kind} {spec.resolution} {spec.encoding} "
            f"{group} {units} {stats.mean(spec.name)!r} {stats.std(spec.name)!r}"
        )
    lines.append(f"records {len(dataset)}")

    with open(os.path.join(out_dir, payload_name), "wb") as payload:
        payload.write(MAGIC)
        offset = len(MAGIC)
        for pair in dataset.pairs:
            lines.append(f"rec {pair.timestamp_id or '-'} {offset}")
            for var in list(pair.hr_targets) + list(pair.conditioning.variables):
                for g in var.grids:
                    payload.write(np.ascontiguousarray(g.values, dtype="<f4").tobytes())
            offset += record_size
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_manifest(manifest_path: str):
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise FormatError(f"cannot read manifest: {exc}") from exc
    if not lines or lines[0] != _MANIFEST_HEADER:
        raise FormatError(f"bad manifest header in {manifest_path!r}")

    kv = {}
    specs: list[VariableSpec] = []
    stats_table = {}
    records: list[tuple[str, int]] = []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "var":
            if len(parts) != 9:
                raise FormatError(f"malformed var line: {ln!r}")
            _, name, kind, res, enc, group, units, mean, std = parts
            spec = VariableSpec(
                name, kind, res, enc,
                dropout_group="" if group == _NONE_GROUP else group,
                units="" if units == _NONE_GROUP else units,
            )
            specs.append(spec)
            if enc == "scalar":
                stats_table[name] = (float(mean), float(std))
        elif parts[0] == "rec":
            if len(parts) != 3:
                raise FormatError(f"malformed rec line: {ln!r}")
            records.append((parts[1], int(parts[2])))
        elif len(parts) == 2:
            kv[parts[0]] = parts[1]
        else:
            raise FormatError(f"unrecognized manifest line: {ln!r}")

    for key in ("scale_factor", "hr_height", "hr_width", "payload", "variables", "records"):
        if key not in kv:
            raise FormatError(f"manifest missing {key!r}")
    if int(kv["variables"]) != len(specs):
        raise FormatError(f"manifest declares {kv['variables']} variables, lists {len(specs)}")
    if int(kv["records"]) != len(records):
        raise FormatError(f"manifest declares {kv['records']} records, lists {len(records)}")
    if not any(s.kind == "target" for s in specs):
        raise FormatError("manifest lists no target variable")
    return kv, specs, StandardizationStats(stats_table), records


def read_dataset(manifest_path: str) -> Dataset:
    """Read a dataset back; grids are bit-exact float32 round-trips in manifest order."""
    manifest_path = os.fspath(manifest_path)
    kv, specs, stats, records = _parse_manifest(manifest_path)
    factor = int(kv["scale_factor"])
    hr_shape = (int(kv["hr_height"]), int(kv["hr_width"]))
    record_size = _record_nbytes(specs, hr_shape, factor)

    payload_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), kv["payload"])
    try:
        with open(payload_path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read payload: {exc}") from exc
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"corrupt magic bytes in {payload_path!r}")

    pairs = []
    for index, (ts, offset) in enumerate(records):
        end = offset + record_size
        if offset < len(MAGIC) or end > len(blob):
            raise FormatError(
                f"record {index} ({ts!r}) truncated or out of range: needs bytes "
                f"[{offset}, {end}) of {len(blob)}"
            )
        cursor = offset
        hr_targets: list[ConditioningVariable] = []
        cond_vars: list[ConditioningVariable] = []
        for spec in specs:
            h, w = _grid_shape(spec, hr_shape, factor)
            grids = []
            for _ in range(spec.channels):
                n = h * w * 4
                raw = np.frombuffer(blob, dtype="<f4", count=h * w, offset=cursor)
                cursor += n
                grid_values = raw.reshape(h, w).astype(np.float64)
                if not np.all(np.isfinite(grid_values)):
                    raise FormatError(f"record {index} ({ts!r}): non-finite values in {spec.name!r}")
                grids.append(FieldGrid(grid_values, units=spec.units))
            var = ConditioningVariable(spec, tuple(grids))
            (hr_targets if spec.kind == "target" else cond_vars).append(var)
        pairs.append(SamplePair(
            hr_targets=tuple(hr_targets),
            conditioning=ConditioningSet(variables=tuple(cond_vars)),
            stats=stats,
            timestamp_id="" if ts == "-" else ts,
            scale_factor=factor,
        ))
    return Dataset(pairs=tuple(pairs))


def _quantize_variable(var: ConditioningVariable) -> ConditioningVariable:
    grids = tuple(
        FieldGrid(g.values.astype("<f4").astype(np.float64), units=g.units) for g in var.grids
    )
    return ConditioningVariable(var.spec, grids)


def build_dataset(pairs: list[SamplePair], stats: StandardizationStats | None = None) -> Dataset:
    """Assemble pairs into a dataset, optionally rebinding them to shared stats.

    Grids are quantized to storage precision (float32) here, so a built
    dataset round-trips through write/read bit-exactly.
    """
    out = []
    for p in pairs:
        out.append(SamplePair(
            hr_targets=tuple(_quantize_variable(v) for v in p.hr_targets),
            conditioning=ConditioningSet(
                variables=tuple(_quantize_variable(v) for v in p.conditioning.variables),
                presence=dict(p.conditioning.presence),
            ),
            stats=stats if stats is not None else p.stats,
            timestamp_id=p.timestamp_id,
            scale_factor=p.scale_factor,
        ))
    return Dataset(pairs=tuple(out))
