import json
import struct

import numpy as np
import pytest

from bgrppg import io
from bgrppg.errors import ConfigError, FormatError
from bgrppg.stmap import StMap


def random_map(rng, shape=(3, 64, 320), semantics="background"):
    return StMap(rng.normal(100, 30, size=shape).astype(np.float32), semantics, 25.0)


class TestStm1:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        m = random_map(rng)
        io.write_stm1(tmp_path / "a.stm1", m)
        back = io.read_stm1(tmp_path / "a.stm1")
        assert back.semantics == "background" and back.fs == 25.0
        assert back.data.astype(np.float32).tobytes() == m.data.astype(np.float32).tobytes()
        io.write_stm1(tmp_path / "b.stm1", back)
        assert (tmp_path / "a.stm1").read_bytes() == (tmp_path / "b.stm1").read_bytes()

    def test_header_layout(self, rng):
        buf = io.encode_stm1(random_map(rng, (2, 3, 4), "global"))
        assert buf[:4] == b"STM1"
        version, code, c, l, t, fs = struct.unpack("<HHIIIf", buf[4:24])
        assert (version, code, c, l, t, fs) == (1, 3, 2, 3, 4, 25.0)
        assert len(buf) == 24 + 4 * 24

    def test_little_endian_regardless_of_host(self):
        m = StMap(np.array([[[1.0, -2.5]]]), "raw-yuv")
        payload = io.encode_stm1(m)[24:]
        assert payload == struct.pack("<2f", 1.0, -2.5)

    def test_truncated(self, rng):
        buf = io.encode_stm1(random_map(rng, (1, 2, 3)))
        with pytest.raises(FormatError, match=r"expected 24 bytes, got 20"):
            io.decode_stm1(buf[:-4])

    def test_truncated_header(self):
        with pytest.raises(FormatError, match="byte 10"):
            io.decode_stm1(b"STM1" + bytes(6))

    def test_bad_magic(self, rng):
        buf = bytearray(io.encode_stm1(random_map(rng, (1, 1, 1))))
        buf[:4] = b"STM2"
        with pytest.raises(FormatError, match="byte 0"):
            io.decode_stm1(bytes(buf))


class TestLabels:
    def test_round_trip(self, tmp_path, rng):
        bvp = rng.normal(size=320)
        io.write_labels(tmp_path / "l.csv", io.label_rows("clip0", bvp, 72.123456789))
        rows = io.read_labels(tmp_path / "l.csv")
        got = np.array([r[2] for r in rows])
        assert np.max(np.abs(got - bvp)) < 1e-7
        assert rows[0][3] == pytest.approx(72.123456789, abs=1e-9)

    def test_significant_digits(self, tmp_path):
        io.write_labels(tmp_path / "l.csv", [("a", 0, 1 / 3, 60.0)])
        line = (tmp_path / "l.csv").read_text().splitlines()[1]
        assert len(line.split(",")[2].replace("0.", "", 1)) >= 9

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(FormatError):
            io.read_labels(tmp_path / "e.csv")

    def test_missing_column(self, tmp_path):
        (tmp_path / "m.csv").write_text("clip_id,frame_index,bvp\na,0,1.0\n")
        with pytest.raises(FormatError, match="hr_bpm"):
            io.read_labels(tmp_path / "m.csv")

    def test_grouping(self, tmp_path):
        rows = [("b", 1, 2.0, 70.0), ("a", 0, 5.0, 80.0), ("b", 0, 1.0, 70.0), ("a", 1, 6.0, 80.0)]
        io.write_labels(tmp_path / "g.csv", rows)
        groups = io.group_labels(io.read_labels(tmp_path / "g.csv"))
        assert list(groups) == ["b", "a"]
        assert groups["b"][0].tolist() == [1.0, 2.0] and groups["a"][1] == 80.0


class TestPpmAndLandmarks:
    def test_ppm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
        io.write_ppm(tmp_path / "f.ppm", img)
        assert np.array_equal(io.read_ppm(tmp_path / "f.ppm"), img)

    def test_ppm_comment_and_errors(self, tmp_path):
        (tmp_path / "c.ppm").write_bytes(b"P6\n# hi\n1 1\n255\n\x01\x02\x03")
        assert io.read_ppm(tmp_path / "c.ppm").tolist() == [[[1, 2, 3]]]
        (tmp_path / "t.ppm").write_bytes(b"P6\n2 2\n255\n\x01")
        with pytest.raises(FormatError, match="expected 12 bytes"):
            io.read_ppm(tmp_path / "t.ppm")
        (tmp_path / "p3.ppm").write_bytes(b"P3\n1 1\n255\n1 2 3\n")
        with pytest.raises(FormatError, match="magic"):
            io.read_ppm(tmp_path / "p3.ppm")

    def test_landmarks(self, tmp_path, landmarks):
        header = ",".join(f"{a}{i}" for i in range(68) for a in "xy")
        row = ",".join(f"{v:.6f}" for v in landmarks.ravel())
        (tmp_path / "lm.csv").write_text(header + "\n" + row + "\n" + row + "\n")
        lm = io.read_landmarks(tmp_path / "lm.csv")
        assert lm.shape == (2, 68, 2) and np.allclose(lm[1], landmarks, atol=1e-6)

    def test_landmarks_wrong_width(self, tmp_path):
        (tmp_path / "lm.csv").write_text("1,2,3\n")
        with pytest.raises(FormatError, match="expected 136"):
            io.read_landmarks(tmp_path / "lm.csv")


class TestConfig:
    def test_valid(self):
        doc = {"seed": 1, "s_norm": 100, "band": [0.66, 4.0],
               "train": {"epochs": 3, "model": {"rows": 16}}, "benchmark": {"kind": "clean", "n": 4}}
        assert io.validate_config(doc) is doc

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="colour"):
            io.validate_config({"colour": 1})
        with pytest.raises(ConfigError, match="train"):
            io.validate_config({"train": {"learning_rate": 1}})

    def test_bad_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        with pytest.raises(ConfigError):
            io.load_config(tmp_path / "c.json")

    def test_load(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"seed": 3}))
        assert io.load_config(tmp_path / "c.json") == {"seed": 3}
