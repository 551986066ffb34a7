"""Process layer stack: JSON loading, validation and z lookup."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

_KINDS = ("line", "via", "dielectric")
_CONTIGUITY_TOL = 1e-9


class StackError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    name: str
    conductivity: float  # W/(m K)

    def __post_init__(self):
        if not self.conductivity > 0:
            raise StackError(f"material {self.name!r}: conductivity must be positive")


@dataclass(frozen=True)
class ProcessLayer:
    name: str
    kind: str
    z_bottom: float  # um
    thickness: float  # um
    background: Material
    metal: Material | None = None
    gds_layer: int | None = None
    gds_datatype: int = 0

    @property
    def z_top(self) -> float:
        return self.z_bottom + self.thickness

    @property
    def has_metal(self) -> bool:
        return self.kind != "dielectric"


@dataclass(frozen=True)
class LayerStack:
    layers: tuple[ProcessLayer, ...]
    materials: dict[str, Material]

    @property
    def total_thickness(self) -> float:
        return sum(layer.thickness for layer in self.layers)

    def layer_index_at(self, z: float) -> int:
        if not 0.0 <= z < self.total_thickness:
            raise StackError(f"z = {z} outside stack [0, {self.total_thickness})")
        for i, layer in enumerate(self.layers):
            if z < layer.z_top:
                return i
        return len(self.layers) - 1

    def layer_at(self, z: float) -> ProcessLayer:
        """Layer whose half-open interval ``[z_bottom, z_top)`` contains ``z``."""
        return self.layers[self.layer_index_at(z)]

    def to_document(self) -> dict[str, Any]:
        layers = []
        for layer in self.layers:
            entry: dict[str, Any] = {
                "name": layer.name,
                "kind": layer.kind,
                "thickness_um": layer.thickness,
                "z_bottom_um": layer.z_bottom,
                "background": layer.background.name,
            }
            if layer.has_metal:
                entry["gds_layer"] = layer.gds_layer
                entry["gds_datatype"] = layer.gds_datatype
                entry["metal"] = layer.metal.name
            layers.append(entry)
        return {
            "materials": {m.name: {"k_w_per_m_k": m.conductivity} for m in self.materials.values()},
            "layers": layers,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_document(), indent=2, sort_keys=True)


def layer_at(stack: LayerStack, z: float) -> ProcessLayer:
    return stack.layer_at(z)


def load_stack(document: str | bytes | dict) -> LayerStack:
    """Build a validated :class:`LayerStack` from a JSON document (text or parsed).

    Layers are listed bottom-up. ``z_bottom_um`` is optional; when omitted it
    is accumulated from the thicknesses below.
    """
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    try:
        mat_doc = doc["materials"]
        layer_docs = doc["layers"]
    except (KeyError, TypeError):
        raise StackError("stack document needs 'materials' and 'layers'") from None
    materials = {}
    for name, props in mat_doc.items():
        materials[name] = Material(name, float(props["k_w_per_m_k"]))

    def material(ref, where):
        if ref not in materials:
            raise StackError(f"layer {where!r}: unknown material {ref!r}")
        return materials[ref]

    if not layer_docs:
        raise StackError("stack has no layers")
    layers = []
    z = 0.0
    for entry in layer_docs:
        name = entry["name"]
        kind = entry["kind"]
        if kind not in _KINDS:
            raise StackError(f"layer {name!r}: kind must be one of {_KINDS}")
        thickness = float(entry["thickness_um"])
        if not thickness > 0:
            raise StackError(f"layer {name!r}: thickness must be positive")
        z_bottom = float(entry.get("z_bottom_um", z))
        if layers:
            prev = layers[-1]
            gap = z_bottom - prev.z_top
            if gap > _CONTIGUITY_TOL:
                raise StackError(f"gap of {gap:g} um between layers {prev.name!r} and {name!r}")
            if gap < -_CONTIGUITY_TOL:
                raise StackError(f"layers {prev.name!r} and {name!r} overlap by {-gap:g} um")
        elif abs(z_bottom) > _CONTIGUITY_TOL:
            raise StackError(f"first layer {name!r} must start at z = 0")
        background = material(entry["background"], name)
        if kind == "dielectric":
            if "metal" in entry:
                raise StackError(f"dielectric layer {name!r} cannot name a metal")
            layer = ProcessLayer(name, kind, z_bottom, thickness, background)
        else:
            if "metal" not in entry or "gds_layer" not in entry:
                raise StackError(f"{kind} layer {name!r} needs 'metal' and 'gds_layer'")
            layer = ProcessLayer(
                name,
                kind,
                z_bottom,
                thickness,
                background,
                material(entry["metal"], name),
                int(entry["gds_layer"]),
                int(entry.get("gds_datatype", 0)),
            )
        layers.append(layer)
        z = layer.z_top
    return LayerStack(tuple(layers), materials)


def demo_stack_document(
    metal_k: float = 400.0,
    dielectric_k: float = 1.4,
    via_thickness: float = 0.2,
    line_thickness: float = 0.22,
    cap_thickness: float = 2.0,
    first_gds_layer: int = 10,
) -> dict[str, Any]:
    """Eleven metal levels (V0, M1, V1, ..., M5, V5) under a field-oxide cap.

    Layer numbers count up from ``first_gds_layer`` bottom-up. The default
    thicknesses add up to 4.3 um.
    """
    layers = []
    gds = first_gds_layer
    for level in range(11):
        is_via = level % 2 == 0
        layers.append(
            {
                "name": f"V{level // 2}" if is_via else f"M{level // 2 + 1}",
                "kind": "via" if is_via else "line",
                "thickness_um": via_thickness if is_via else line_thickness,
                "gds_layer": gds,
                "gds_datatype": 0,
                "metal": "copper",
                "background": "dielectric",
            }
        )
        gds += 1
    layers.append({"name": "cap", "kind": "dielectric", "thickness_um": cap_thickness, "background": "dielectric"})
    return {
        "materials": {"copper": {"k_w_per_m_k": metal_k}, "dielectric": {"k_w_per_m_k": dielectric_k}},
        "layers": layers,
    }
