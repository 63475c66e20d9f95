"""Stream harness: ordering, per-method invariants, report bundle determinism."""

import json
from pathlib import Path

import numpy as np
import pytest

from hitta.errors import ConfigError
from hitta.harness import (
    StreamReport,
    StreamRunner,
    build_stream,
    compare_reports,
    export_overlays,
    run_matrix,
    run_stream,
    sample_rngs,
)
from hitta.methods import resolve_method


class TestBuildStream:
    def test_deterministic_per_seed(self, tiny_dataset):
        a = build_stream(tiny_dataset, None, seed=0, limit=None)
        b = build_stream(tiny_dataset, None, seed=0, limit=None)
        assert [i.record["id"] for i in a] == [i.record["id"] for i in b]
        assert len(a) == 16  # 4 target domains x 4 test samples
        assert [i.index for i in a] == list(range(16))

    def test_seed_changes_order_within_domains(self, tiny_dataset):
        a = [i.record["id"] for i in build_stream(tiny_dataset, None, seed=0, limit=None)]
        b = [i.record["id"] for i in build_stream(tiny_dataset, None, seed=1, limit=None)]
        assert sorted(a) == sorted(b)
        assert a != b

    def test_domains_arrive_in_manifest_order(self, tiny_dataset):
        stream = build_stream(tiny_dataset, None, seed=0, limit=None)
        domains = [i.domain for i in stream]
        assert domains == ["targetA"] * 4 + ["targetB"] * 4 + ["targetC"] * 4 + ["targetD"] * 4

    def test_limit_truncates_per_domain(self, tiny_dataset):
        stream = build_stream(tiny_dataset, None, seed=0, limit=3)
        assert len(stream) == 12
        assert all(i.rater in ("R2", "R3", "R4", "R5") for i in stream)

    def test_domain_subset_and_unknown_domain(self, tiny_dataset):
        stream = build_stream(tiny_dataset, ["targetC"], seed=0, limit=None)
        assert {i.domain for i in stream} == {"targetC"}
        with pytest.raises(ConfigError):
            build_stream(tiny_dataset, ["atlantis"], seed=0, limit=None)


class TestSampleRngs:
    def test_same_inputs_same_streams(self):
        (a1, a2), (b1, b2) = sample_rngs(0, 5), sample_rngs(0, 5)
        assert a1.random(4).tolist() == b1.random(4).tolist()
        assert a2.random(4).tolist() == b2.random(4).tolist()

    def test_index_and_seed_both_matter(self):
        base = sample_rngs(0, 5)[0].random(4).tolist()
        assert sample_rngs(0, 6)[0].random(4).tolist() != base
        assert sample_rngs(1, 5)[0].random(4).tolist() != base

    def test_pre_and_post_streams_are_independent(self):
        pre, post = sample_rngs(3, 7)
        assert pre.random(4).tolist() != post.random(4).tolist()


class TestMethodInvariants:
    def test_no_tta_never_touches_parameters(self, make_tiny_run):
        run = make_tiny_run(methods=["no_tta"], domains=["targetA"])
        runner = StreamRunner("no_tta", run)
        before = runner.fingerprints()
        report = run_stream("no_tta", run)
        after = StreamRunner("no_tta", run).fingerprints()
        assert before == after  # fresh runners always start from the checkpoint
        assert len(report.rows) == 2
        assert all(r.chosen_head == "main" for r in report.rows)
        assert all(r.mdiv_mean is None for r in report.rows)

    def test_no_tta_runner_parameters_constant_across_stream(self, make_tiny_run):
        run = make_tiny_run(methods=["no_tta"], domains=["targetA"])
        runner = StreamRunner("no_tta", run)
        start = runner.fingerprints()
        while not runner.exhausted:
            runner.predict_next()
            runner.commit_feedback(None, "main")
        assert runner.fingerprints() == start

    def test_tbn_changes_statistics_mode_only(self, make_tiny_run):
        run = make_tiny_run(methods=["tbn"], domains=["targetA"])
        runner = StreamRunner("tbn", run)
        start = runner.fingerprints()
        while not runner.exhausted:
            runner.predict_next()
            runner.commit_feedback(None, "main")
        assert runner.fingerprints() == start  # no learning anywhere

    def test_tent_moves_affines_only(self, make_tiny_run):
        run = make_tiny_run(methods=["tent"], domains=["targetA"])
        runner = StreamRunner("tent", run)
        start = runner.fingerprints()
        while not runner.exhausted:
            runner.predict_next()
            runner.commit_feedback(None, "main")
        end = runner.fingerprints()
        assert end["bn_affine"] != start["bn_affine"]
        assert end["non_bn_affine"] == start["non_bn_affine"]
        assert end["buffers"] == start["buffers"]

    def test_hitta_presents_both_masks_and_learns_backbone(self, make_tiny_run, tiny_dataset):
        run = make_tiny_run(methods=["hitta"], domains=["targetA"])
        runner = StreamRunner("hitta", run)
        start = runner.fingerprints()
        bundle = runner.predict_next()
        assert set(bundle.masks) == {"main", "pref"}
        assert bundle.mdiv_mean is not None and bundle.mdiv_mean >= 0
        chosen, tag = runner.oracle_choice(bundle)
        corrected = bundle.sample.rater_masks[bundle.rater]
        runner.commit_feedback(corrected, tag)
        end = runner.fingerprints()
        assert end["non_bn_affine"] != start["non_bn_affine"]  # feedback reaches the backbone
        assert end["buffers"] == start["buffers"]              # source stats still intact

    def test_reset_per_domain_restores_checkpoint_between_domains(self, make_tiny_run):
        reports = {}
        for reset in (False, True):
            run = make_tiny_run(
                methods=["hitta"], domains=["targetA", "targetB"],
                limit=1, reset_per_domain=reset,
            )
            reports[reset] = run_stream("hitta", run)
        first_rows = {k: r.rows[0] for k, r in reports.items()}
        assert first_rows[False].to_json() == first_rows[True].to_json()  # same first sample
        second = {k: r.rows[1] for k, r in reports.items()}
        assert second[False].to_json() != second[True].to_json()  # carried vs fresh state


class TestReports:
    @pytest.fixture()
    def report(self, make_tiny_run):
        run = make_tiny_run(methods=["hitta"], domains=["targetA", "targetB"], limit=2)
        return run_stream("hitta", run)

    def test_aggregate_matches_rows(self, report):
        agg = report.aggregate()
        rows = report.rows
        want = float(np.mean([r.dsc_rx for r in rows]))
        assert agg["overall"]["vs_rstar"] == pytest.approx(want, abs=1e-12)
        for domain in ("targetA", "targetB"):
            sub = [r for r in rows if r.domain == domain]
            want_d = float(np.mean([r.dsc_r1 for r in sub]))
            assert agg["per_domain"][domain]["vs_r1"] == pytest.approx(want_d, abs=1e-12)
        assert agg["overall"]["n"] == 4

    def test_json_round_trip_is_lossless(self, report):
        again = StreamReport.from_json(report.to_json())
        assert compare_reports(report, again) == []

    def test_compare_reports_flags_differences(self, report):
        mutated = StreamReport.from_json(report.to_json())
        mutated.rows[0].dsc_r1_od += 1e-6
        problems = compare_reports(report, mutated)
        assert problems
        assert any("dsc_r1_od" in p or "row 0" in p for p in problems)

    def test_every_row_scores_both_references(self, report):
        for row in report.rows:
            for value in (row.dsc_r1_od, row.dsc_r1_oc, row.dsc_rx_od, row.dsc_rx_oc):
                assert 0.0 <= value <= 1.0
            assert row.dsc_r1 == pytest.approx((row.dsc_r1_od + row.dsc_r1_oc) / 2)
            assert row.dsc_rx == pytest.approx((row.dsc_rx_od + row.dsc_rx_oc) / 2)


class TestMatrix:
    def test_matrix_rerun_reproduces_tables_byte_for_byte(self, tiny_root, tiny_checkpoint, tmp_path):
        from conftest import tiny_run

        outputs = {}
        for tag in ("one", "two"):
            out = tmp_path / tag
            run = tiny_run(
                tiny_root, tiny_checkpoint, out,
                methods=["no_tta", "hitta"], domains=["targetA"], limit=2,
            )
            run_matrix(run, log=lambda *a, **k: None)
            outputs[tag] = {
                p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()
            }
        assert set(outputs["one"]) == {
            "config.yaml", "report_no_tta.json", "report_hitta.json",
            "matrix.csv", "matrix.json", "summary.txt",
        }
        for name in outputs["one"]:
            assert outputs["one"][name] == outputs["two"][name], f"{name} differs"

    def test_matrix_json_has_fixed_precision_strings(self, tiny_root, tiny_checkpoint, tmp_path):
        from conftest import tiny_run

        run = tiny_run(tiny_root, tiny_checkpoint, tmp_path / "m",
                       methods=["no_tta"], domains=["targetA"], limit=1)
        run_matrix(run, log=lambda *a, **k: None)
        blob = json.loads((tmp_path / "m" / "matrix.json").read_text())
        cell = blob["methods"]["no_tta"]["overall"]["vs_rstar"]
        assert isinstance(cell, str) and len(cell.split(".")[1]) == 6


class TestOverlays:
    def test_one_png_per_row_and_deterministic(self, make_tiny_run, tiny_dataset, tmp_path):
        run = make_tiny_run(methods=["no_tta"], domains=["targetA"], limit=2)
        report = run_stream("no_tta", run)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        export_overlays(tiny_dataset, report, out_a)
        export_overlays(tiny_dataset, report, out_b)
        pngs = sorted(p.name for p in out_a.glob("*.png"))
        assert len(pngs) == 2
        assert all(name.endswith("_no_tta.png") for name in pngs)
        for name in pngs:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_limit_caps_output(self, make_tiny_run, tiny_dataset, tmp_path):
        run = make_tiny_run(methods=["no_tta"], domains=["targetA"], limit=2)
        report = run_stream("no_tta", run)
        export_overlays(tiny_dataset, report, tmp_path / "c", limit=1)
        assert len(list((tmp_path / "c").glob("*.png"))) == 1


def test_method_registry_resolves_every_name():
    for name in ("no_tta", "tbn", "tent", "hitta", "hitta_no_div", "hitta_no_hf", "hitta_entropy_weight"):
        spec = resolve_method(name)
        assert spec.name == name
    with pytest.raises(ConfigError):
        resolve_method("gradient_psychic")
