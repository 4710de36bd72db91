import json

import pytest

from pacsim.costmodel import (EnergyParams, LayerGeometry, compare_schemes, count_cycles, cycle_reduction_pct,
                              energy_estimate, format_table, memory_traffic, reports_to_csv)
from pacsim.errors import PacsimError


def test_cycles():
    assert count_cycles(8, 8, 4) == (16, 48)
    assert count_cycles(8, 8, 0) == (64, 0)
    assert count_cycles(8, 8, 4, dynamic_avg=12) == (12, 52)
    assert cycle_reduction_pct(8, 8, 16) == 75.0
    with pytest.raises(PacsimError):
        count_cycles(8, 8, 9)
    with pytest.raises(PacsimError):
        count_cycles(8, 8, 4, dynamic_avg=70)


def test_traffic_bits_per_value():
    t = memory_traffic(LayerGeometry(10, 64))
    assert t.pacim_bits_per_value == 4 + 8 * 7 / 64
    assert t.baseline_bits == 2 * 640 * 8
    assert t.reduction_pct == pytest.approx(100 * (1 - (4 + 56 / 64) / 8))
    with pytest.raises(PacsimError):
        memory_traffic(LayerGeometry(0, 64))


def test_energy_linear_and_defaults():
    p = EnergyParams()
    assert p.e_pcu_op * 2945.92e12 == pytest.approx(1.0)
    assert p.e_sram_bit == pytest.approx(30.375e-12 / 64)
    r1 = energy_estimate(256, 1, 16, 48, p)
    r3 = energy_estimate(256, 3, 16, 48, p)
    assert r3.energy_total == pytest.approx(3 * r1.energy_total)
    assert r1.energy_breakdown["dcim"] == pytest.approx(16 * 256 * p.e_dcim_1b_op)


def test_compare_schemes_and_output():
    base, hyb = compare_schemes(512, geometry=LayerGeometry(1, 512))
    assert (base.digital_cycles, hyb.digital_cycles) == (64, 16)
    assert base.efficiency_tops_w(1) == pytest.approx(235.01)
    assert hyb.compute_energy < base.compute_energy
    text = reports_to_csv([base, hyb], comments=["seed=0"])
    assert text.splitlines()[1].startswith("scheme,n,macs")
    assert "hybrid" in format_table([base, hyb])


def test_params_file(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"pcu_tops_per_w": 1000.0, "e_sram_access_pj": 10, "access_width_bits": 32}))
    p = EnergyParams.from_file(path)
    assert p.e_pcu_op == pytest.approx(1e-15) and p.e_sram_bit == pytest.approx(10e-12 / 32)
    back = EnergyParams.from_file(_write(tmp_path / "q.json", p.to_json()))
    assert back.e_pcu_op == pytest.approx(p.e_pcu_op)
    assert back.access_width_bits == 32
    path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(PacsimError):
        EnergyParams.from_file(path)
    with pytest.raises(PacsimError):
        EnergyParams(e_pcu_op=0.0)


def _write(path, text):
    path.write_text(text)
    return path
