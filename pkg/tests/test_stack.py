import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beoltherm.stack import StackError, demo_stack_document, layer_at, load_stack


def _doc(*layers):
    return {"materials": {"cu": {"k_w_per_m_k": 400.0}, "ox": {"k_w_per_m_k": 1.4}}, "layers": list(layers)}


def _line(name, t, **extra):
    return {"name": name, "kind": "line", "thickness_um": t, "gds_layer": 1, "metal": "cu", "background": "ox", **extra}


def test_demo_stack_structure(demo_stack):
    # 11 metal levels (6 via, 5 line) under a 2 um oxide cap, 4.3 um in total
    assert len(demo_stack.layers) == 12
    kinds = [layer.kind for layer in demo_stack.layers]
    assert kinds.count("via") == 6 and kinds.count("line") == 5
    assert kinds[-1] == "dielectric" and demo_stack.layers[-1].thickness == 2.0
    assert demo_stack.total_thickness == pytest.approx(4.3, abs=1e-9)
    assert demo_stack.materials["copper"].conductivity / demo_stack.materials["dielectric"].conductivity > 100


def test_demo_stack_is_contiguous(demo_stack):
    for lower, upper in zip(demo_stack.layers, demo_stack.layers[1:]):
        assert abs(lower.z_top - upper.z_bottom) <= 1e-9
    assert demo_stack.layers[0].z_bottom == 0.0


def test_single_dielectric_layer():
    stack = load_stack(_doc({"name": "ox", "kind": "dielectric", "thickness_um": 1.0, "background": "ox"}))
    assert len(stack.layers) == 1
    assert stack.total_thickness == 1.0
    assert stack.layers[0].metal is None and not stack.layers[0].has_metal


def test_overlap_names_both_layers():
    doc = _doc(_line("M1", 0.5), _line("M2", 0.5, z_bottom_um=0.4))
    with pytest.raises(StackError, match="'M1' and 'M2' overlap"):
        load_stack(doc)


def test_gap_names_both_layers():
    doc = _doc(_line("M1", 0.5), _line("M2", 0.5, z_bottom_um=0.6))
    with pytest.raises(StackError, match="between layers 'M1' and 'M2'"):
        load_stack(doc)


def test_explicit_contiguous_bottoms_accepted():
    stack = load_stack(_doc(_line("M1", 0.5), _line("M2", 0.5, z_bottom_um=0.5 + 1e-10)))
    assert stack.layers[1].z_bottom == pytest.approx(0.5)


@pytest.mark.parametrize("layer, message", [
    (_line("M1", 0.5, metal="gold"), "unknown material 'gold'"),
    ({"name": "c", "kind": "dielectric", "thickness_um": 1.0, "background": "air"}, "unknown material 'air'"),
    (_line("M1", 0.0), "thickness must be positive"),
    (_line("M1", -1.0), "thickness must be positive"),
    ({"name": "c", "kind": "plate", "thickness_um": 1.0, "background": "ox"}, "kind must be one of"),
    ({"name": "V", "kind": "via", "thickness_um": 1.0, "background": "ox"}, "needs 'metal' and 'gds_layer'"),
    ({"name": "c", "kind": "dielectric", "thickness_um": 1.0, "metal": "cu", "background": "ox"}, "cannot name a metal"),
])
def test_invalid_layers_rejected(layer, message):
    with pytest.raises(StackError, match=message):
        load_stack(_doc(layer))


def test_invalid_documents_rejected():
    with pytest.raises(StackError, match="needs 'materials'"):
        load_stack({"layers": []})
    with pytest.raises(StackError, match="no layers"):
        load_stack(_doc())
    with pytest.raises(StackError, match="conductivity must be positive"):
        load_stack({"materials": {"x": {"k_w_per_m_k": 0}}, "layers": []})


def test_layer_at_conventions(demo_stack):
    assert layer_at(demo_stack, 0.0) is demo_stack.layers[0]
    assert layer_at(demo_stack, demo_stack.total_thickness - 1e-12) is demo_stack.layers[-1]
    for lower, upper in zip(demo_stack.layers, demo_stack.layers[1:]):
        assert layer_at(demo_stack, upper.z_bottom) is upper
    for z in (-1e-12, demo_stack.total_thickness, 10.0):
        with pytest.raises(StackError, match="outside stack"):
            layer_at(demo_stack, z)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=8))
def test_layer_at_piecewise_constant(thicknesses):
    stack = load_stack(_doc(*[_line(f"L{i}", t / 10) for i, t in enumerate(thicknesses)]))
    # sample on a grid finer than any layer and count the constant pieces
    n = 4000
    names = [layer_at(stack, stack.total_thickness * (k + 0.5) / n).name for k in range(n)]
    pieces = 1 + sum(a != b for a, b in zip(names, names[1:]))
    assert pieces == len(stack.layers)
    assert [layer.z_bottom for layer in stack.layers] == pytest.approx([sum(thicknesses[:i]) / 10 for i in range(len(thicknesses))])


def test_serialized_stack_reloads_exactly(demo_stack):
    text = demo_stack.dumps()
    again = load_stack(text)
    assert again == demo_stack
    assert again.dumps() == text
    assert json.loads(text)["layers"][0]["z_bottom_um"] == 0.0


def test_demo_document_thickness_override():
    stack = load_stack(demo_stack_document(cap_thickness=1.0))
    assert stack.total_thickness == pytest.approx(3.3)
