import json
import math

import numpy as np
import pytest

from frictionlab import cli
from frictionlab.config import (
    ConfigError,
    apply_env_overrides,
    load_config,
)

BASE = {
    "schema": 1,
    "market": {"n": [4], "sigma": 0.2, "s0": 100.0},
    "penalty": {"kind": "quadratic", "lam": 1.0},
    "claim": {"kind": "call", "strike": 100.0},
}


def write_config(tmp_path, name="config.json", **overrides):
    raw = json.loads(json.dumps(BASE))
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(raw.get(key), dict):
            raw[key].update(val)
        else:
            raw[key] = val
    f = tmp_path / name
    f.write_text(json.dumps(raw))
    return str(f)


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return header, [dict(zip(header, l.split(","))) for l in lines[1:]]


class TestConfigLoading:
    def test_valid_config_with_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.n_list == [4]
        assert cfg.penalty.kind == "quadratic"
        assert cfg.claim.kind == "call"
        assert cfg.engine_mode == "auto"
        assert cfg.gamma_points == 241
        assert cfg.seed == 0 and cfg.threads == 1

    def test_sections_parsed(self, tmp_path):
        path = write_config(
            tmp_path,
            engine={"mode": "lattice", "gamma_points": 121, "gamma_bound": 1.5},
            dual={"steps": 50, "starts": 2, "kusuoka_a": 0.05},
            hjb={"nx": 401, "level": 0.1},
            truncate_at=0.25,
            seed=7,
            threads=2,
            gap_threshold=0.5,
        )
        cfg = load_config(path)
        assert cfg.engine_mode == "lattice"
        assert (cfg.gamma_points, cfg.gamma_bound) == (121, 1.5)
        assert (cfg.ascent_steps, cfg.ascent_starts) == (50, 2)
        assert cfg.kusuoka_a == 0.05
        assert (cfg.hjb_nx, cfg.hjb_level) == (401, 0.1)
        assert cfg.truncate_at == 0.25
        assert (cfg.seed, cfg.threads, cfg.gap_threshold) == (7, 2, 0.5)

    def test_truncation_applied(self, tmp_path):
        cfg = load_config(write_config(tmp_path, truncate_at=0.25))
        pen = cfg.effective_penalty()
        assert pen.kind == "truncated_quadratic"
        assert (pen.lam, pen.c) == (1.0, 0.25)
        assert cfg.limit_level() == 0.25

    @pytest.mark.parametrize(
        "overrides",
        [
            {"schema": 2},
            {"market": {"n": []}},
            {"market": {"n": [4, 2]}},
            {"market": {"n": [0]}},
            {"penalty": {"kind": "nonsense"}},
            {"penalty": {"kind": "quadratic", "lam": -1.0}},
            {"claim": {"kind": "nonsense"}},
            {"engine": {"mode": "warp"}},
            {"seed": -1},
            {"threads": 0},
        ],
        ids=["schema", "empty-n", "decreasing-n", "zero-n", "bad-penalty",
             "neg-lam", "bad-claim", "bad-mode", "neg-seed", "zero-threads"],
    )
    def test_invalid_configs_rejected(self, tmp_path, overrides):
        with pytest.raises(ConfigError):
            load_config(write_config(tmp_path, **overrides))

    def test_missing_schema_rejected(self, tmp_path):
        raw = {k: v for k, v in BASE.items() if k != "schema"}
        f = tmp_path / "noschema.json"
        f.write_text(json.dumps(raw))
        with pytest.raises(ConfigError):
            load_config(str(f))

    def test_unreadable_and_malformed(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(str(bad))


class TestEnvOverrides:
    def test_overrides_applied(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        env = {
            "FRICTIONLAB_SEED": "9",
            "FRICTIONLAB_THREADS": "3",
            "FRICTIONLAB_OUT": "/tmp/elsewhere",
            "FRICTIONLAB_GAP_THRESHOLD": "0.25",
            "FRICTIONLAB_ENGINE_MODE": "exact",
        }
        cfg = apply_env_overrides(cfg, env)
        assert cfg.seed == 9
        assert cfg.threads == 3
        assert cfg.out_dir == "/tmp/elsewhere"
        assert cfg.gap_threshold == 0.25
        assert cfg.engine_mode == "exact"

    def test_invalid_env_rejected(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        with pytest.raises(ConfigError):
            apply_env_overrides(cfg, {"FRICTIONLAB_SEED": "nope"})
        with pytest.raises(ConfigError):
            apply_env_overrides(cfg, {"FRICTIONLAB_ENGINE_MODE": "warp"})

    def test_cli_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FRICTIONLAB_SEED", "9")
        out = tmp_path / "out"
        code = cli.main(["price", "--config", write_config(tmp_path),
                         "--out", str(out), "--seed", "3"])
        assert code == 0
        assert (out / "price.csv").exists()


class TestPriceCommand:
    def test_runs_and_writes_outputs(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = cli.main(["price", "--config", write_config(tmp_path),
                         "--out", str(out)])
        assert code == 0
        header, rows = read_csv(out / "price.csv")
        assert header == ["n", "primal", "engine", "boundary_hit"]
        assert rows[0]["engine"] == "exact"
        assert float(rows[0]["primal"]) > 0.0
        assert (out / "strategy_n4.txt").exists()
        assert "primal=" in capsys.readouterr().out

    def test_twelve_significant_digits(self, tmp_path):
        out = tmp_path / "out"
        cli.main(["price", "--config", write_config(tmp_path),
                  "--out", str(out)])
        _, rows = read_csv(out / "price.csv")
        field = rows[0]["primal"]
        # the formatting is %.12g: re-formatting the parsed value is identity
        assert f"{float(field):.12g}" == field
        digits = field.replace("-", "").replace(".", "").split("e")[0]
        assert len(digits.lstrip("0")) >= 10  # full precision actually used

    def test_reruns_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, market={"n": [3, 5]})
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert cli.main(["price", "--config", cfg, "--out", str(out1)]) == 0
        assert cli.main(["price", "--config", cfg, "--out", str(out2)]) == 0
        assert (out1 / "price.csv").read_bytes() == (out2 / "price.csv").read_bytes()
        assert (out1 / "strategy_n5.txt").read_bytes() == \
            (out2 / "strategy_n5.txt").read_bytes()

    def test_invalid_config_exit_code(self, tmp_path):
        code = cli.main(["price", "--config",
                         write_config(tmp_path, schema=99),
                         "--out", str(tmp_path / "out")])
        assert code == 2

    def test_engine_refusal_exit_code(self, tmp_path):
        # exact engine demanded beyond the exhaustive cap
        cfg = write_config(tmp_path, market={"n": [32]},
                           engine={"mode": "exact"})
        code = cli.main(["price", "--config", cfg,
                         "--out", str(tmp_path / "out")])
        assert code == 4

    def test_lattice_refusal_for_lookback(self, tmp_path):
        cfg = write_config(tmp_path, market={"n": [32]},
                           claim={"kind": "lookback_max", "strike": 100.0})
        code = cli.main(["price", "--config", cfg,
                         "--out", str(tmp_path / "out")])
        assert code == 4


class TestDualCommand:
    def test_gap_within_loose_threshold(self, tmp_path):
        cfg = write_config(tmp_path, market={"n": [2, 4]},
                           truncate_at=0.25,
                           dual={"steps": 200, "starts": 3},
                           gap_threshold=0.01)
        out = tmp_path / "out"
        assert cli.main(["dual", "--config", cfg, "--out", str(out)]) == 0
        header, rows = read_csv(out / "duality.csv")
        assert header[:5] == ["n", "primal", "dual", "gap", "rel_gap"]
        for row in rows:
            # weak duality in the emitted table
            assert float(row["dual"]) <= float(row["primal"]) + 1e-9
        assert rows[0]["dual_method"] == "brute-force"
        assert rows[1]["dual_method"] == "ascent"

    def test_threshold_breach_exit_code(self, tmp_path):
        cfg = write_config(tmp_path, market={"n": [3]},
                           gap_threshold=1e-12)
        code = cli.main(["dual", "--config", cfg,
                         "--out", str(tmp_path / "out")])
        assert code == 3


class TestConvergeCommand:
    def test_writes_rows_and_trend(self, tmp_path):
        cfg = write_config(tmp_path, market={"n": [2, 4]},
                           truncate_at=0.25,
                           dual={"steps": 60, "starts": 2},
                           hjb={"nx": 201})
        out = tmp_path / "out"
        code = cli.main(["converge", "--config", cfg, "--out", str(out)])
        assert code == 0  # fewer than 3 sizes: the trend gate is vacuous
        header, rows = read_csv(out / "convergence.csv")
        assert header == ["n", "primal", "dual_bound", "kusuoka_bound",
                          "limit", "gap"]
        assert [r["n"] for r in rows] == ["2", "4"]
        limit = float(rows[0]["limit"])
        for r in rows:
            assert float(r["gap"]) == pytest.approx(
                float(r["primal"]) - limit, abs=1e-9
            )
        trend = (out / "convergence_trend.txt").read_text()
        assert trend == "decreasing_last3=True\n"

    def test_threads_do_not_change_output(self, tmp_path):
        cfg = write_config(tmp_path, market={"n": [2, 3, 4]},
                           truncate_at=0.25,
                           dual={"steps": 40, "starts": 2},
                           hjb={"nx": 201})
        out1, out2 = tmp_path / "t1", tmp_path / "t2"
        c1 = cli.main(["converge", "--config", cfg, "--out", str(out1),
                       "--threads", "1"])
        c2 = cli.main(["converge", "--config", cfg, "--out", str(out2),
                       "--threads", "3"])
        assert c1 == c2
        assert (out1 / "convergence.csv").read_bytes() == \
            (out2 / "convergence.csv").read_bytes()

    def test_kusuoka_column_populated(self, tmp_path):
        cfg = write_config(tmp_path, market={"n": [2, 8]},
                           dual={"steps": 40, "starts": 2,
                                 "kusuoka_a": 0.05},
                           hjb={"nx": 201})
        out = tmp_path / "out"
        cli.main(["converge", "--config", cfg, "--out", str(out)])
        _, rows = read_csv(out / "convergence.csv")
        kus = float(rows[1]["kusuoka_bound"])
        assert math.isfinite(kus)
        assert kus <= float(rows[1]["primal"]) + 1e-9

    def test_full_path_claim_refused_beyond_cap(self, tmp_path):
        cfg = write_config(tmp_path, market={"n": [8, 32]},
                           claim={"kind": "lookback_max", "strike": 100.0})
        code = cli.main(["converge", "--config", cfg,
                         "--out", str(tmp_path / "out")])
        assert code == 4


class TestHjbCommand:
    def test_writes_value_and_surface(self, tmp_path):
        cfg = write_config(tmp_path, truncate_at=0.25, hjb={"nx": 201})
        out = tmp_path / "out"
        assert cli.main(["hjb", "--config", cfg, "--out", str(out)]) == 0
        _, rows = read_csv(out / "hjb_value.csv")
        assert float(rows[0]["value"]) > 0.0
        surface = (out / "hjb_surface.csv").read_text().splitlines()
        assert surface[0] == "t,x,v"
        assert len(surface) > 100

    def test_tabulated_penalty_refused(self, tmp_path):
        table = tmp_path / "pen.txt"
        nu = np.linspace(-2.0, 2.0, 21)
        np.savetxt(table, np.column_stack([nu, 0.5 * nu**2]))
        cfg = write_config(tmp_path,
                           penalty={"kind": "tabulated", "table": str(table),
                                    "lam": None})
        code = cli.main(["hjb", "--config", cfg,
                         "--out", str(tmp_path / "out")])
        assert code == 4

    def test_zero_limit_level_too_large_refused(self, tmp_path):
        # proportional cost with c >= sigma/2 has no admissible limit problem
        cfg = write_config(tmp_path,
                           penalty={"kind": "proportional", "c": 0.15,
                                    "lam": None})
        code = cli.main(["hjb", "--config", cfg,
                         "--out", str(tmp_path / "out")])
        assert code == 4


class TestVerifyCommand:
    def test_priced_strategy_verifies(self, tmp_path):
        out = tmp_path / "out"
        base = write_config(tmp_path)
        assert cli.main(["price", "--config", base, "--out", str(out)]) == 0
        cfg = write_config(tmp_path, name="verify.json",
                           strategy_path=str(out / "strategy_n4.txt"))
        assert cli.main(["verify", "--config", cfg, "--out", str(out)]) == 0
        _, rows = read_csv(out / "verify.csv")
        assert rows[0]["passes"] == "1"
        assert float(rows[0]["min_slack"]) >= -1e-8

    def test_underfunded_strategy_fails(self, tmp_path):
        out = tmp_path / "out"
        base = write_config(tmp_path)
        cli.main(["price", "--config", base, "--out", str(out)])
        sfile = out / "strategy_n4.txt"
        lines = sfile.read_text().splitlines()
        head = lines[0].split()
        x = float(head[-1].split("=")[1])
        head[-1] = f"x={x - 0.1!r}"
        sfile.write_text(" ".join(head) + "\n" + "\n".join(lines[1:]) + "\n")
        cfg = write_config(tmp_path, name="verify.json",
                           strategy_path=str(sfile))
        assert cli.main(["verify", "--config", cfg, "--out", str(out)]) == 3

    def test_missing_strategy_path_is_config_error(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli.main(["verify", "--config", cfg,
                         "--out", str(tmp_path / "out")]) == 2


class TestPremiumCommand:
    def test_positive_premium_reported(self, tmp_path):
        cfg = write_config(tmp_path, truncate_at=0.25, hjb={"nx": 401})
        out = tmp_path / "out"
        assert cli.main(["premium", "--config", cfg, "--out", str(out)]) == 0
        _, rows = read_csv(out / "premium.csv")
        row = rows[0]
        assert float(row["premium"]) > 0.0
        assert float(row["constant_control_bound"]) <= \
            float(row["limit_value"]) + 1e-6
        assert float(row["baseline"]) == pytest.approx(
            7.965567455405804, abs=1e-9  # CSV carries 12 significant digits
        )

    def test_non_convex_claim_rejected(self, tmp_path):
        cfg = write_config(tmp_path,
                           claim={"kind": "asian_call", "strike": 100.0})
        assert cli.main(["premium", "--config", cfg,
                         "--out", str(tmp_path / "out")]) == 2


class TestTimings:
    def test_timings_column_is_optional_and_excluded_from_determinism(
        self, tmp_path
    ):
        cfg = write_config(tmp_path, timings=True)
        out = tmp_path / "out"
        assert cli.main(["price", "--config", cfg, "--out", str(out)]) == 0
        header, rows = read_csv(out / "price.csv")
        assert header[-1] == "runtime_ms"
        assert float(rows[0]["runtime_ms"]) >= 0.0
