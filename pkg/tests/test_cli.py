from pathlib import Path

import pytest

from voxelpump.cli import main

SAMPLES = Path(__file__).parent.parent / "samples"

PUMP_LINE = (
    "pump %s { bore_mm=30 max_travel_mm=100 pitch_mm=8 steps_per_rev=200 "
    "microsteps=16 max_step_rate=25000 max_accel=200000 }"
)


def write_program(tmp_path, text, name="prog.gait"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


GOOD = PUMP_LINE % "a" + "\nwave a sine period=2 amplitude_ml=10\nrun 2 s\n"


class TestValidate:
    def test_valid_program_exit_0(self, tmp_path, capsys):
        rc = main(["validate", write_program(tmp_path, GOOD)])
        assert rc == 0
        out = capsys.readouterr()
        assert out.out == "" and out.err == ""

    def test_three_pump_sample_is_valid(self):
        assert main(["validate", str(SAMPLES / "three_pump_rotation.gait")]) == 0

    def test_bad_duty_positioned_exit_1(self, tmp_path, capsys):
        bad = PUMP_LINE % "a" + "\nwave a sine period=2 amplitude_ml=10 duty=1.5\n"
        path = write_program(tmp_path, bad)
        rc = main(["validate", path])
        assert rc == 1
        err = capsys.readouterr().err
        assert path + ":2:" in err
        assert "duty" in err

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.gait")]) == 2

    def test_stroke_violation_exit_1(self, tmp_path, capsys):
        bad = PUMP_LINE % "a" + "\nwave a sine period=2 amplitude_ml=80\nrun 2 s\n"
        rc = main(["validate", write_program(tmp_path, bad)])
        assert rc == 1
        assert "capacity" in capsys.readouterr().err

    def test_infeasible_exit_1(self, tmp_path, capsys):
        bad = PUMP_LINE % "a" + "\nwave a sine period=0.05 amplitude_ml=20\nrun 2 s\n"
        rc = main(["validate", write_program(tmp_path, bad)])
        assert rc == 1
        assert "steps/s" in capsys.readouterr().err


class TestSimulate:
    def test_row_count_from_parameters(self, tmp_path, capsys):
        # 2 cycles of a 2 s period at 1 ms tick: duration/tick + initial row
        prog = PUMP_LINE % "a" + "\nwave a sine period=2 amplitude_ml=10 cycles=2\nrun 4 s\n"
        out = tmp_path / "t.csv"
        rc = main(["simulate", write_program(tmp_path, prog), "--out", str(out)])
        assert rc == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert len(lines) == 1 + 4001  # header + one row per tick incl. t=0
        assert "cycles=2" in capsys.readouterr().out

    def test_wave_described_in_header_comments(self, tmp_path):
        out = tmp_path / "t.csv"
        assert main(["simulate", write_program(tmp_path, GOOD), "--out", str(out)]) == 0
        first = out.read_text().splitlines()[0]
        assert first.startswith("# wave pump=0")
        assert "shape=sine" in first and "period=2.0" in first

    def test_duration_zero_header_and_initial_row(self, tmp_path):
        out = tmp_path / "t.csv"
        rc = main([
            "simulate", write_program(tmp_path, GOOD), "--out", str(out), "--duration", "0",
        ])
        assert rc == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert len(lines) == 2

    def test_with_plants_file(self, tmp_path):
        out = tmp_path / "t.csv"
        rc = main([
            "simulate", str(SAMPLES / "three_pump_rotation.gait"),
            "--plants", str(SAMPLES / "plants.cfg"),
            "--out", str(out), "--telemetry-hz", "100",
        ])
        assert rc == 0
        assert out.exists()

    def test_infeasible_exit_1(self, tmp_path, capsys):
        bad = PUMP_LINE % "a" + "\nwave a sine period=0.05 amplitude_ml=20\nrun 1 s\n"
        rc = main(["simulate", write_program(tmp_path, bad), "--out", str(tmp_path / "t.csv")])
        assert rc == 1
        assert "steps/s" in capsys.readouterr().err

    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        prog = write_program(tmp_path, GOOD)
        assert main(["simulate", prog, "--out", str(a)]) == 0
        assert main(["simulate", prog, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestFrames:
    def test_frame_count_and_broadcast(self, tmp_path, capsys):
        rc = main(["frames", write_program(tmp_path, GOOD)])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.count("frame ") == 4
        assert "START" in out and "pump=0xff" in out

    def test_deterministic(self, tmp_path, capsys):
        prog = write_program(tmp_path, GOOD)
        main(["frames", prog])
        first = capsys.readouterr().out
        main(["frames", prog])
        assert capsys.readouterr().out == first

    def test_overflow_diagnostic(self, tmp_path, capsys):
        # feasible motion (slow, giant syringe) whose amplitude exceeds 2^32 uL
        huge = (
            "pump a { bore_mm=3000 max_travel_mm=2000 pitch_mm=8 steps_per_rev=200 "
            "microsteps=16 max_step_rate=25000 max_accel=200000 }\n"
            "wave a sine period=100 amplitude_ml=4294967.296\nrun 200 s\n"
        )
        rc = main(["frames", write_program(tmp_path, huge)])
        assert rc == 1
        assert "wire field" in capsys.readouterr().err

    def test_out_file(self, tmp_path):
        out = tmp_path / "frames.txt"
        rc = main(["frames", write_program(tmp_path, GOOD), "--out", str(out)])
        assert rc == 0
        assert out.read_text().count("frame ") == 4


class TestPlot:
    def test_panels_and_sidecar(self, tmp_path, capsys):
        csv = tmp_path / "t.csv"
        main([
            "simulate", str(SAMPLES / "three_pump_rotation.gait"),
            "--out", str(csv), "--telemetry-hz", "100",
        ])
        img = tmp_path / "fig.png"
        rc = main(["plot", str(csv), "--out", str(img)])
        assert rc == 0
        assert img.exists() and img.stat().st_size > 0
        assert (tmp_path / "fig_data.csv").exists()

    def test_schema_error_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("nope\n")
        rc = main(["plot", str(bad), "--out", str(tmp_path / "x.png")])
        assert rc == 1
        assert ":1:" in capsys.readouterr().err

    def test_empty_data_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("t_s,pump_id,commanded_ml,position_steps,voxel_pa\n")
        rc = main(["plot", str(bad), "--out", str(tmp_path / "x.png")])
        assert rc == 1
        assert "no data rows" in capsys.readouterr().err

    def test_missing_csv_exit_2(self, tmp_path):
        assert main(["plot", str(tmp_path / "no.csv"), "--out", str(tmp_path / "x.png")]) == 2


class TestRunSerial:
    def test_unopenable_port_exit_2(self, tmp_path, capsys):
        rc = main(["run", write_program(tmp_path, GOOD), "--port", str(tmp_path / "no-such-tty")])
        assert rc == 2
        assert "transport error" in capsys.readouterr().err

    def test_bad_baud_exit_2(self, tmp_path):
        rc = main(["run", write_program(tmp_path, GOOD), "--port", "/dev/null", "--baud", "1234"])
        assert rc == 2


class TestUsage:
    def test_no_args_exit_2(self):
        assert main([]) == 2

    def test_unknown_subcommand_exit_2(self):
        assert main(["frobnicate"]) == 2
