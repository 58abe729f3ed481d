import numpy as np
import pytest

from philasso.taxonomy import Taxon, Taxonomy, TaxonomyTable, parse_taxonomy

# The thirteen-unit example hierarchy used across the test suite.
EXAMPLE_ROWS = [
    ("Actinobacteria", "Actinobacteria", "Bifidobacteriales", "Bifidobacteriaceae"),
    ("Actinobacteria", "Actinobacteria", "Bifidobacteriales", "Bifidobacteriaceae"),
    ("Firmicutes", "Bacilli", "Lactobacillales", "Enterococcaceae"),
    ("Firmicutes", "Bacilli", "Lactobacillales", "Enterococcaceae"),
    ("Firmicutes", "Bacilli", "Lactobacillales", "Enterococcaceae"),
    ("Firmicutes", "Bacilli", "Lactobacillales", "Lactobacillaceae"),
    ("Firmicutes", "Bacilli", "Lactobacillales", "Lactobacillaceae"),
    ("Firmicutes", "Bacilli", "Lactobacillales", "Lactobacillaceae"),
    ("Firmicutes", "Clostridia", "Clostridiale", "Clostridiaceae 1"),
    ("Firmicutes", "Clostridia", "Clostridiale", "Clostridiaceae 1"),
    ("Firmicutes", "Clostridia", "Clostridiale", "Lachnospiraceae"),
    ("Firmicutes", "Clostridia", "Clostridiale", "Lachnospiraceae"),
    ("Firmicutes", "Clostridia", "Clostridiale", "Lachnospiraceae"),
]


def example_table() -> TaxonomyTable:
    return TaxonomyTable(
        level_names=("Phylum", "Class", "Order", "Family"),
        unit_name="OTU",
        rows=tuple((i + 1, labels, f"OTU_{i + 1}") for i, labels in enumerate(EXAMPLE_ROWS)),
    )


@pytest.fixture
def otu_taxonomy() -> Taxonomy:
    return parse_taxonomy(example_table())


def group_taxonomy(groups: list[list[int]], p: int | None = None) -> Taxonomy:
    """Two-level taxonomy: one grouping level with the given index groups."""
    p = p if p is not None else max(max(g) for g in groups)
    level1 = tuple(
        Taxon(level=1, order=k, indices=frozenset(g), name=f"G{k}")
        for k, g in enumerate(groups)
    )
    singles = tuple(
        Taxon(level=2, order=j, indices=frozenset({j + 1}), name=f"u{j + 1}")
        for j in range(p)
    )
    return Taxonomy(p=p, levels=(level1, singles))


def levels_taxonomy(levels: list[list[list[int]]], p: int) -> Taxonomy:
    """Taxonomy from explicit grouping-level index groups; singletons appended."""
    built = []
    for t, level in enumerate(levels, start=1):
        built.append(tuple(
            Taxon(level=t, order=k, indices=frozenset(g), name=f"t{t}.{k}")
            for k, g in enumerate(level)
        ))
    built.append(tuple(
        Taxon(level=len(levels) + 1, order=j, indices=frozenset({j + 1}), name=f"u{j + 1}")
        for j in range(p)
    ))
    return Taxonomy(p=p, levels=tuple(built))


def random_taxonomy(rng: np.random.Generator, p: int, depth: int, nested: bool) -> Taxonomy:
    """Random valid taxonomy: nested (refining splits) or independent partitions."""
    levels = []
    if nested:
        groups = [list(range(1, p + 1))]
        for _ in range(depth):
            new = []
            for g in groups:
                if len(g) > 1 and rng.random() < 0.7:
                    cut = int(rng.integers(1, len(g)))
                    new.extend([g[:cut], g[cut:]])
                else:
                    new.append(g)
            groups = new
            levels.append([list(g) for g in groups])
    else:
        for _ in range(depth):
            perm = rng.permutation(p) + 1
            k = int(rng.integers(1, max(2, p // 2 + 1)))
            cuts = np.sort(rng.choice(np.arange(1, p), size=min(k, p - 1), replace=False))
            levels.append([list(map(int, part)) for part in np.split(perm, cuts)])
    return levels_taxonomy(levels, p)
