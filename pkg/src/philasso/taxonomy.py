"""Taxonomies: level-wise partitions of covariate indices and their lineages.

A taxonomy is an ordered collection of T+1 taxon levels. Each level
partitions the covariate indices {1, ..., p} into disjoint taxa; the final
level always consists of the p singletons. A lineage picks one taxon per
grouping level (levels 1..T); its index set is the intersection of the
chosen taxa. Levels need not be nested, so the same machinery covers both
rooted-tree hierarchies and overlapping (cyclic) classifications.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Taxon",
    "Taxonomy",
    "Lineage",
    "TaxonomyTable",
    "TaxonomyError",
    "Violation",
    "parse_taxonomy",
    "validate",
    "lineages",
    "singleton_taxonomy",
    "augment_with_singleton_level",
    "balanced_taxonomy",
    "serialize_taxonomy",
    "read_taxonomy_tsv",
    "write_taxonomy_tsv",
]

# Covariates beyond this are almost certainly a misconfigured branching/depth.
MAX_COVARIATES = 2_000_000

UNCLASSIFIED_LABEL = "unclassified"


class TaxonomyError(ValueError):
    """Raised for malformed taxonomy tables or inconsistent structures."""


@dataclass(frozen=True)
class Taxon:
    """One taxon: a named subset of covariate indices at a given level.

    Identifiers are (level, order) where order is first-appearance order
    within the level, so identical inputs always yield identical ids.
    """

    level: int                 # 1-based level; T+1 is the singleton level
    order: int                 # 0-based first-appearance order within level
    indices: frozenset[int]    # 1-based covariate indices
    name: str = ""

    @property
    def id(self) -> tuple[int, int]:
        return (self.level, self.order)

    def __contains__(self, index: int) -> bool:
        return index in self.indices


@dataclass(frozen=True)
class Lineage:
    """One taxon per grouping level, with the (nonempty) index intersection."""

    taxa: tuple[Taxon, ...]
    indices: tuple[int, ...]   # sorted, 1-based

    @property
    def ids(self) -> tuple[tuple[int, int], ...]:
        return tuple(t.id for t in self.taxa)


@dataclass(frozen=True)
class Taxonomy:
    """T+1 taxon levels over p covariates; the last level is all singletons."""

    p: int
    levels: tuple[tuple[Taxon, ...], ...]
    level_names: tuple[str, ...] = ()  # display names, grouping levels + unit

    @property
    def depth(self) -> int:
        """Number of grouping levels T (excludes the singleton level)."""
        return len(self.levels) - 1

    @property
    def grouping_levels(self) -> tuple[tuple[Taxon, ...], ...]:
        return self.levels[:-1]

    @property
    def singleton_level(self) -> tuple[Taxon, ...]:
        return self.levels[-1]

    def names_for_level(self) -> tuple[str, ...]:
        if len(self.level_names) == len(self.levels):
            return self.level_names
        return tuple(f"level{t}" for t in range(1, self.depth + 1)) + ("unit",)

    @cached_property
    def membership(self) -> tuple[np.ndarray, ...]:
        """Per grouping level: array mapping 0-based covariate -> taxon order.

        Requires every level to partition {1..p}; validate() first if the
        structure is untrusted.
        """
        out = []
        for level in self.grouping_levels:
            m = np.full(self.p, -1, dtype=np.intp)
            for taxon in level:
                idx = np.fromiter(taxon.indices, dtype=np.intp) - 1
                m[idx] = taxon.order
            if np.any(m < 0):
                raise TaxonomyError(
                    f"level {level[0].level if level else '?'} does not cover "
                    "all covariates; run validate() for details"
                )
            out.append(m)
        return tuple(out)

    @cached_property
    def lineage_ids(self) -> np.ndarray:
        """0-based lineage index per covariate, aligned with lineages()."""
        keys = np.stack(self.membership, axis=1) if self.depth else np.zeros((self.p, 0), dtype=np.intp)
        order = np.lexsort(keys.T[::-1])
        lid = np.empty(self.p, dtype=np.intp)
        current = -1
        prev = None
        for j in order:
            k = tuple(keys[j])
            if k != prev:
                current += 1
                prev = k
            lid[j] = current
        return lid


def _build_level(level_no: int, groups: list[tuple[str, list[int]]]) -> tuple[Taxon, ...]:
    return tuple(
        Taxon(level=level_no, order=k, indices=frozenset(idx), name=name)
        for k, (name, idx) in enumerate(groups)
    )


@dataclass(frozen=True)
class TaxonomyTable:
    """Tabular taxonomy: one row per covariate, one label per named level.

    Mirrors the OTU-table convention of a label column per taxonomic rank
    plus a terminal unit (OTU id) column.
    """

    level_names: tuple[str, ...]
    unit_name: str
    rows: tuple[tuple[int, tuple[str, ...], str], ...]  # (index, labels, unit)

    def __post_init__(self):
        if not self.rows:
            raise TaxonomyError("empty taxonomy table")
        width = len(self.level_names)
        for index, labels, _ in self.rows:
            if len(labels) != width:
                raise TaxonomyError(
                    f"column-count mismatch at covariate {index}: "
                    f"expected {width} level labels, got {len(labels)}"
                )


def parse_taxonomy(table: TaxonomyTable, unclassified_label: str = UNCLASSIFIED_LABEL) -> Taxonomy:
    """Build a Taxonomy from a label table.

    Each level's taxa are the distinct label groups of that column, in
    first-appearance order (rows sorted by covariate index). The designated
    unclassified label is scoped by its parent group, so "unclassified"
    under two different parents yields two distinct taxa. A singleton level
    built from the terminal unit column is appended.
    """
    rows = sorted(table.rows, key=lambda r: r[0])
    indices = [r[0] for r in rows]
    p = len(rows)
    seen = set()
    for i in indices:
        if i in seen:
            raise TaxonomyError(f"duplicate covariate index {i}")
        seen.add(i)
    if seen != set(range(1, p + 1)):
        missing = sorted(set(range(1, p + 1)) - seen)
        raise TaxonomyError(
            f"covariate indices must be 1..{p} exactly once; missing {missing[:5]}"
        )
    if not table.level_names:
        raise TaxonomyError("table needs at least one grouping level")

    n_levels = len(table.level_names)
    levels = []
    # scope keys per row, extended level by level so "unclassified" nests
    parent_keys: list = [None] * p
    for t in range(n_levels):
        groups: dict = {}
        order: list[tuple[str, list[int]]] = []
        new_keys = []
        for r, (index, labels, _) in enumerate(rows):
            label = labels[t]
            key = label if label != unclassified_label else (unclassified_label, parent_keys[r])
            if key not in groups:
                groups[key] = len(order)
                order.append((label, []))
            order[groups[key]][1].append(index)
            new_keys.append(key)
        parent_keys = new_keys
        levels.append(_build_level(t + 1, order))

    singles = tuple(
        Taxon(level=n_levels + 1, order=r, indices=frozenset({index}), name=unit)
        for r, (index, _, unit) in enumerate(rows)
    )
    levels.append(singles)
    return Taxonomy(
        p=p,
        levels=tuple(levels),
        level_names=tuple(table.level_names) + (table.unit_name,),
    )


@dataclass(frozen=True)
class Violation:
    """A single invariant violation, as data rather than an exception."""

    kind: str
    level: int
    taxon: tuple[int, int] | None
    indices: tuple[int, ...]
    message: str


def validate(taxonomy: Taxonomy) -> list[Violation]:
    """Return all invariant violations; empty list iff the taxonomy is valid."""
    out: list[Violation] = []
    p = taxonomy.p
    full = set(range(1, p + 1))
    if taxonomy.depth < 1:
        out.append(Violation("too-shallow", 0, None, (),
                             "need at least one grouping level above the singletons"))
    for level_no, level in enumerate(taxonomy.levels, start=1):
        seen: dict[int, tuple[int, int]] = {}
        for taxon in level:
            if not taxon.indices:
                out.append(Violation("empty-taxon", level_no, taxon.id, (),
                                     f"taxon {taxon.id} has no indices"))
            bad = tuple(sorted(i for i in taxon.indices if not (1 <= i <= p)))
            if bad:
                out.append(Violation("out-of-range", level_no, taxon.id, bad,
                                     f"taxon {taxon.id} has indices outside 1..{p}: {bad[:5]}"))
            overlap = tuple(sorted(i for i in taxon.indices if i in seen))
            if overlap:
                out.append(Violation("overlap", level_no, taxon.id, overlap,
                                     f"taxon {taxon.id} shares indices {overlap[:5]} "
                                     f"with taxon {seen[overlap[0]]}"))
            for i in taxon.indices:
                seen.setdefault(i, taxon.id)
        missing = tuple(sorted(full - set(seen)))
        if missing:
            out.append(Violation("incomplete-partition", level_no, None, missing,
                                 f"level {level_no} misses indices {missing[:5]}"))
    last = taxonomy.levels[-1] if taxonomy.levels else ()
    if len(last) != p or any(len(t.indices) != 1 for t in last):
        out.append(Violation("non-singleton-terminal", len(taxonomy.levels), None, (),
                             "final level must consist of exactly p singletons"))
    return out


def lineages(taxonomy: Taxonomy) -> list[Lineage]:
    """Enumerate all nonempty lineages, ordered lexicographically by taxon ids.

    One taxon is chosen per grouping level; combinations with an empty index
    intersection are not materialized. The resulting index sets always
    partition {1..p}.
    """
    memb = taxonomy.membership
    by_key: dict[tuple[int, ...], list[int]] = {}
    for j in range(taxonomy.p):
        key = tuple(int(m[j]) for m in memb)
        by_key.setdefault(key, []).append(j + 1)
    out = []
    for key in sorted(by_key):
        taxa = tuple(taxonomy.levels[t][k] for t, k in enumerate(key))
        out.append(Lineage(taxa=taxa, indices=tuple(sorted(by_key[key]))))
    return out


def singleton_taxonomy(p: int, depth: int) -> Taxonomy:
    """Taxonomy whose every level (grouping and terminal) is all singletons."""
    if p < 1 or depth < 1:
        raise TaxonomyError("need p >= 1 and at least one grouping level")
    levels = tuple(
        tuple(Taxon(level=t, order=j, indices=frozenset({j + 1}), name=f"u{j + 1}")
              for j in range(p))
        for t in range(1, depth + 2)
    )
    return Taxonomy(p=p, levels=levels)


def augment_with_singleton_level(taxonomy: Taxonomy) -> Taxonomy:
    """Add one grouping level that duplicates the singleton level.

    The construction that upgrades group-selection consistency to a full
    per-coefficient oracle property; all existing levels are unchanged.
    """
    t_new = taxonomy.depth + 1
    dup = tuple(
        Taxon(level=t_new, order=t.order, indices=t.indices, name=t.name)
        for t in taxonomy.singleton_level
    )
    terminal = tuple(
        Taxon(level=t_new + 1, order=t.order, indices=t.indices, name=t.name)
        for t in taxonomy.singleton_level
    )
    names = taxonomy.level_names
    if len(names) == len(taxonomy.levels):
        names = names[:-1] + (f"{names[-1]}+", names[-1])
    return Taxonomy(
        p=taxonomy.p,
        levels=taxonomy.grouping_levels + (dup, terminal),
        level_names=names,
    )


def balanced_taxonomy(branching: int, depth: int) -> Taxonomy:
    """Balanced taxonomy: grouping level k+1 has branching**k equal taxa.

    p = branching**depth covariates; the deepest grouping level consists of
    sibling blocks of size `branching`, and a singleton level is appended.
    """
    if branching < 2 or depth < 1:
        raise TaxonomyError("need branching >= 2 and depth >= 1")
    p = branching ** depth
    if p > MAX_COVARIATES:
        raise TaxonomyError(f"p = {branching}**{depth} = {p} exceeds {MAX_COVARIATES}")
    levels = []
    for k in range(depth):
        size = branching ** (depth - k)
        level = tuple(
            Taxon(level=k + 1, order=i,
                  indices=frozenset(range(i * size + 1, (i + 1) * size + 1)),
                  name=f"L{k + 1}.{i}")
            for i in range(branching ** k)
        )
        levels.append(level)
    levels.append(tuple(
        Taxon(level=depth + 1, order=j, indices=frozenset({j + 1}), name=f"u{j + 1}")
        for j in range(p)
    ))
    return Taxonomy(p=p, levels=tuple(levels))


# =========================
# TSV interchange format
# =========================
# Header: index<TAB>level1<TAB>...<TAB>levelT<TAB>unit ; one row per covariate,
# 1-based indices, UTF-8.

def serialize_taxonomy(taxonomy: Taxonomy) -> str:
    names = taxonomy.names_for_level()
    header = "index\t" + "\t".join(names)
    label_of = []
    for level in taxonomy.grouping_levels:
        col = {}
        for taxon in level:
            for i in taxon.indices:
                col[i] = taxon.name or f"t{taxon.level}.{taxon.order}"
        label_of.append(col)
    unit_of = {}
    for taxon in taxonomy.singleton_level:
        (i,) = tuple(taxon.indices)
        unit_of[i] = taxon.name or f"u{i}"
    lines = [header]
    for i in range(1, taxonomy.p + 1):
        lines.append("\t".join([str(i)] + [col[i] for col in label_of] + [unit_of[i]]))
    return "\n".join(lines) + "\n"


def _table_from_tsv(text: str) -> TaxonomyTable:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise TaxonomyError("empty taxonomy table")
    header = lines[0].split("\t")
    if len(header) < 3 or header[0] != "index":
        raise TaxonomyError(
            "taxonomy TSV header must be index<TAB>level1...<TAB>unit"
        )
    level_names = tuple(header[1:-1])
    rows = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) != len(header):
            raise TaxonomyError(f"column-count mismatch on row: {ln[:60]!r}")
        try:
            index = int(parts[0])
        except ValueError as exc:
            raise TaxonomyError(f"non-integer covariate index {parts[0]!r}") from exc
        rows.append((index, tuple(parts[1:-1]), parts[-1]))
    return TaxonomyTable(level_names=level_names, unit_name=header[-1], rows=tuple(rows))


def read_taxonomy_tsv(path) -> Taxonomy:
    with open(path, encoding="utf-8") as fh:
        return parse_taxonomy(_table_from_tsv(fh.read()))


def write_taxonomy_tsv(taxonomy: Taxonomy, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_taxonomy(taxonomy))
