"""Category vocabulary, object instance templates, and seen/unseen splits.

Object categories are split two-thirds seen; within each seen category
two-thirds of the instances are marked seen. Receptacle categories are never
split: every receptacle category counts as seen. Evaluation pools follow from
the split: train episodes draw seen instances of seen categories, validation
episodes draw unseen instances of either seen or unseen categories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EpisodeGenerationError
from .seeding import rng_from

OBJECT = "object"
RECEPTACLE = "receptacle"

PHASE_TRAIN = "train"
PHASE_VAL_SCUI = "val_scui"  # seen category, unseen instance
PHASE_VAL_UCUI = "val_ucui"  # unseen category, unseen instance
PHASES = (PHASE_TRAIN, PHASE_VAL_SCUI, PHASE_VAL_UCUI)


@dataclass(frozen=True)
class Category:
    name: str
    kind: str  # OBJECT or RECEPTACLE


@dataclass(frozen=True)
class ObjectTemplate:
    """Geometry template an episode instantiates into a placed object."""

    template_id: str
    category: str
    footprint_radius: float  # m
    height: float  # m

    def __post_init__(self):
        if self.footprint_radius <= 0 or self.height <= 0:
            raise ValueError(f"non-positive dimensions on {self.template_id}")


@dataclass
class Catalog:
    """Full vocabulary: categories plus the pool of instance templates."""

    categories: list[Category]
    templates: list[ObjectTemplate] = field(default_factory=list)

    def __post_init__(self):
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ValueError("duplicate category names in catalog")
        by_name = {c.name: c for c in self.categories}
        for t in self.templates:
            cat = by_name.get(t.category)
            if cat is None:
                raise ValueError(f"template {t.template_id} has unknown category")
            if cat.kind != OBJECT:
                raise ValueError(f"template {t.template_id} must be an object category")

    @property
    def object_categories(self) -> list[str]:
        return [c.name for c in self.categories if c.kind == OBJECT]

    @property
    def receptacle_categories(self) -> list[str]:
        return [c.name for c in self.categories if c.kind == RECEPTACLE]

    def templates_for(self, category: str) -> list[ObjectTemplate]:
        return [t for t in self.templates if t.category == category]

    def channel_names(self) -> list[str]:
        """Semantic-map channel order: object categories then receptacles."""
        return self.object_categories + self.receptacle_categories

    def to_dict(self) -> dict:
        return {
            "categories": [[c.name, c.kind] for c in self.categories],
            "templates": [
                [t.template_id, t.category, t.footprint_radius, t.height]
                for t in self.templates
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Catalog":
        return cls(
            categories=[Category(n, k) for n, k in d["categories"]],
            templates=[
                ObjectTemplate(i, c, float(r), float(h))
                for i, c, r, h in d["templates"]
            ],
        )


@dataclass
class SplitAssignment:
    """Seen/unseen designation of object categories and instance templates."""

    seen_categories: list[str]
    unseen_categories: list[str]
    seen_templates: list[str]  # template ids, seen instances of seen categories
    unseen_templates_seen_cat: list[str]
    unseen_templates_unseen_cat: list[str]

    def pool(self, phase: str) -> list[str]:
        if phase == PHASE_TRAIN:
            return self.seen_templates
        if phase == PHASE_VAL_SCUI:
            return self.unseen_templates_seen_cat
        if phase == PHASE_VAL_UCUI:
            return self.unseen_templates_unseen_cat
        raise ValueError(f"unknown phase {phase!r}")

    def counts(self) -> dict[str, int]:
        """Structure counts: category and instance totals per pool."""
        seen_cat_of = {}
        for tid in self.seen_templates:
            seen_cat_of.setdefault(self._cat_key(tid), True)
        return {
            "seen_categories": len(self.seen_categories),
            "unseen_categories": len(self.unseen_categories),
            "categories_with_seen_instances": len(
                {self._cat_key(t) for t in self.seen_templates}),
            "categories_with_unseen_instances": len(
                {self._cat_key(t) for t in self.unseen_templates_seen_cat}),
            "train_instances": len(self.seen_templates),
            "val_scui_instances": len(self.unseen_templates_seen_cat),
            "val_ucui_instances": len(self.unseen_templates_unseen_cat),
        }

    @staticmethod
    def _cat_key(template_id: str) -> str:
        # Template ids are "<category>/<n>"; see assign_splits.
        return template_id.rsplit("/", 1)[0]


def assign_splits(catalog: Catalog, seed: int) -> SplitAssignment:
    """Designate seen/unseen categories and instances.

    floor(2/3 * n) of the object categories are seen; within each seen
    category floor(2/3 * n_i) of its templates are seen. Both designations
    are uniform at random under the seed and deterministic given it.
    """
    object_cats = [c.name for c in catalog.categories if c.kind == OBJECT]
    if len(object_cats) < 3:
        raise EpisodeGenerationError(
            f"need at least 3 object categories to split, got {len(object_cats)}")
    rng = rng_from("splits", seed)
    order = rng.permutation(len(object_cats))
    n_seen = (2 * len(object_cats)) // 3
    seen = sorted(object_cats[i] for i in order[:n_seen])
    unseen = sorted(object_cats[i] for i in order[n_seen:])
    seen_set = set(seen)

    seen_templates: list[str] = []
    unseen_sc: list[str] = []
    unseen_uc: list[str] = []
    for cat in object_cats:  # catalog order keeps the draw sequence stable
        tids = [t.template_id for t in catalog.templates_for(cat)]
        if cat not in seen_set:
            unseen_uc.extend(tids)
            continue
        perm = rng.permutation(len(tids))
        k = (2 * len(tids)) // 3
        chosen = sorted(perm[:k])
        chosen_set = set(chosen)
        for idx, tid in enumerate(tids):
            (seen_templates if idx in chosen_set else unseen_sc).append(tid)
    return SplitAssignment(seen, unseen, seen_templates, unseen_sc, unseen_uc)


# Default vocabulary for generated scenes. Sizes are catalog constants, in
# meters; per-instance variation is applied in default_catalog.
_OBJECT_SIZES = {
    "cup": (0.04, 0.10), "bowl": (0.07, 0.06), "plate": (0.10, 0.03),
    "book": (0.09, 0.04), "bottle": (0.035, 0.22), "can": (0.035, 0.11),
    "box": (0.08, 0.10), "toy_animal": (0.05, 0.12), "stuffed_toy": (0.09, 0.15),
    "remote": (0.05, 0.03), "shoe": (0.06, 0.09), "hat": (0.10, 0.08),
    "vase": (0.05, 0.20), "jar": (0.045, 0.12), "pan": (0.11, 0.06),
    "mug": (0.045, 0.10), "clock": (0.06, 0.12), "candle": (0.03, 0.09),
    "basket": (0.11, 0.10), "sponge": (0.05, 0.03), "ball": (0.05, 0.10),
    "teapot": (0.07, 0.12), "statue": (0.05, 0.18), "tray": (0.12, 0.02),
}

_RECEPTACLE_CATEGORIES = (
    "table", "counter", "sofa", "bed", "cabinet", "stool", "desk", "shelf",
)


def default_catalog(instances_per_category: int = 6, seed: int = 0) -> Catalog:
    """Built-in vocabulary: 24 object categories, 8 receptacle categories.

    Instance templates get deterministic +-20% size variation so unseen
    instances differ from seen ones geometrically, not just by id.
    """
    cats = [Category(n, OBJECT) for n in _OBJECT_SIZES]
    cats += [Category(n, RECEPTACLE) for n in _RECEPTACLE_CATEGORIES]
    rng = rng_from("catalog", seed)
    templates = []
    for name, (r, h) in _OBJECT_SIZES.items():
        scales = 1.0 + 0.2 * (2.0 * rng.random(instances_per_category) - 1.0)
        for k in range(instances_per_category):
            templates.append(ObjectTemplate(
                template_id=f"{name}/{k}",
                category=name,
                footprint_radius=round(r * float(scales[k]), 4),
                height=round(h * float(scales[k]), 4),
            ))
    return Catalog(cats, templates)
