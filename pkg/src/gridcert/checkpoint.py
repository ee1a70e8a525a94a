"""Descriptor checkpoints: JSON round-trip for the per-type network bundles."""

import json

from . import nn

KIND_EF = "energy_function"
KIND_DSC = "dsc"
_KINDS = (KIND_EF, KIND_DSC)


def save_checkpoint(path, descriptor_kind: str, nets: dict,
                    analytic_bindings: dict | None = None,
                    seed_provenance: dict | None = None) -> None:
    """Write a descriptor to ``path`` as JSON.

    nets maps type keys to Mlp objects; analytic_bindings records, per hybrid
    key, the closed-form term the aggregation adds alongside that network.
    """
    if descriptor_kind not in _KINDS:
        raise ValueError(f"unknown descriptor kind {descriptor_kind!r}")
    doc = {
        "descriptor_kind": descriptor_kind,
        "nets": {key: nn.mlp_to_dict(net) for key, net in nets.items()},
        "analytic_bindings": dict(analytic_bindings or {}),
        "seed_provenance": dict(seed_provenance or {}),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path, expect_kind: str | None = None) -> dict:
    """Read a checkpoint back; nets come out as Mlp objects.

    A kind mismatch is refused so an EF checkpoint cannot be fed to a DSC
    command or vice versa.
    """
    with open(path) as fh:
        doc = json.load(fh)
    kind = doc.get("descriptor_kind")
    if kind not in _KINDS:
        raise ValueError(f"checkpoint has unknown descriptor kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise ValueError(f"checkpoint kind {kind!r} does not match expected {expect_kind!r}")
    nets = {key: nn.mlp_from_dict(d) for key, d in doc["nets"].items()}
    return {
        "descriptor_kind": kind,
        "nets": nets,
        "analytic_bindings": doc.get("analytic_bindings", {}),
        "seed_provenance": doc.get("seed_provenance", {}),
    }
