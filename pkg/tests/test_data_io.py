import numpy as np
import pytest

from resmark import io as rio
from resmark.data import SynthDatasetSpec, synth_dataset
from resmark.detector import DetectorConfig, build_detector, forward_logits, predict
from resmark.errors import FormatError, InvalidArgumentError
from resmark.transforms import TransformPipeline, TransformSpec
from resmark import autodiff as ag


class TestSynthDataset:
    def test_deterministic(self):
        spec = SynthDatasetSpec(count=20, shape=(3, 16, 16), generator="mixed", seed=3)
        a_train, a_test = synth_dataset(spec)
        b_train, b_test = synth_dataset(spec)
        np.testing.assert_array_equal(a_train, b_train)
        np.testing.assert_array_equal(a_test, b_test)

    @pytest.mark.parametrize("generator", ["gaussian_field", "shapes", "mixed"])
    def test_range_and_split(self, generator):
        spec = SynthDatasetSpec(count=30, shape=(2, 12, 12), generator=generator, seed=1,
                                train_fraction=0.6)
        train_x, test_x = synth_dataset(spec)
        assert train_x.shape == (18, 2, 12, 12)
        assert test_x.shape == (12, 2, 12, 12)
        for arr in (train_x, test_x):
            assert arr.min() >= 0.0 and arr.max() <= 1.0
            assert arr.dtype == np.float32

    def test_invalid_spec_rejected(self):
        with pytest.raises(InvalidArgumentError):
            SynthDatasetSpec(count=1)
        with pytest.raises(InvalidArgumentError):
            SynthDatasetSpec(count=10, generator="photos")
        with pytest.raises(InvalidArgumentError):
            SynthDatasetSpec(count=10, train_fraction=1.0)

    def test_generators_not_separable_without_training(self):
        """Labels must come from watermarks, not content: an untrained
        detector cannot tell the two generators apart."""
        a, _ = synth_dataset(SynthDatasetSpec(count=200, shape=(3, 16, 16),
                                              generator="gaussian_field", seed=5))
        b, _ = synth_dataset(SynthDatasetSpec(count=200, shape=(3, 16, 16),
                                              generator="shapes", seed=6))
        model = build_detector(
            DetectorConfig(input_shape=(3, 16, 16), channel_widths=(4, 8), strides=(1, 2), seed=2)
        )
        pred_a = predict(model, a)
        pred_b = predict(model, b)
        acc = 0.5 * ((pred_a == 0).mean() + (pred_b == 1).mean())
        acc = max(acc, 1.0 - acc)
        assert acc <= 0.6


class TestTensorFile:
    def test_empty_container(self, tmp_path):
        path = tmp_path / "empty.rtns"
        rio.save_tensor_file(path, [])
        assert rio.load_tensor_file(path) == {}

    def test_round_trip_bit_exact(self, tmp_path, rng):
        tensors = [
            ("a", rng.normal(size=(3, 4)).astype(np.float32)),
            ("b/nested name", rng.normal(size=(2, 2, 2)).astype(np.float32)),
            ("scalar", np.array(3.5, dtype=np.float32)),
        ]
        path = tmp_path / "t.rtns"
        rio.save_tensor_file(path, tensors)
        loaded = rio.load_tensor_file(path)
        assert list(loaded) == ["a", "b/nested name", "scalar"]
        for name, arr in tensors:
            np.testing.assert_array_equal(loaded[name], arr)
            assert loaded[name].dtype == np.float32

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.rtns"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            rio.load_tensor_file(path)
        try:
            rio.load_tensor_file(path)
        except FormatError as exc:
            assert exc.offset == 0

    def test_truncation_names_offset(self, tmp_path, rng):
        path = tmp_path / "t.rtns"
        rio.save_tensor_file(path, [("w", rng.normal(size=(8, 8)).astype(np.float32))])
        data = path.read_bytes()
        cut = path.with_suffix(".cut")
        cut.write_bytes(data[: len(data) - 40])
        with pytest.raises(FormatError, match="truncated"):
            rio.load_tensor_file(cut)
        try:
            rio.load_tensor_file(cut)
        except FormatError as exc:
            assert exc.offset is not None
            assert "expected" in str(exc)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "v9.rtns"
        rio.save_tensor_file(path, [])
        raw = bytearray(path.read_bytes())
        raw[4:6] = (9).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            rio.load_tensor_file(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "t.rtns"
        rio.save_tensor_file(path, [])
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(FormatError, match="trailing"):
            rio.load_tensor_file(path)


class TestCheckpoint:
    def test_round_trip_preserves_forward(self, tmp_path, tiny_model, rng):
        path = tmp_path / "m.rswt"
        rio.save_checkpoint(tiny_model, path, meta={"note": "test"})
        loaded, meta = rio.load_checkpoint(path)
        assert meta == {"note": "test"}
        batch = rng.random((3, 3, 16, 16)).astype(np.float32)
        with ag.no_grad():
            a = forward_logits(tiny_model, batch).data
            b = forward_logits(loaded, batch).data
        np.testing.assert_array_equal(a, b)

    def test_parameters_bit_exact(self, tmp_path, tiny_model):
        path = tmp_path / "m.rswt"
        rio.save_checkpoint(tiny_model, path)
        loaded, _ = rio.load_checkpoint(path)
        for name, p in tiny_model.params.items():
            np.testing.assert_array_equal(p.data, loaded.params[name].data)

    def test_version_bump_rejected(self, tmp_path, tiny_model):
        path = tmp_path / "m.rswt"
        rio.save_checkpoint(tiny_model, path)
        raw = bytearray(path.read_bytes())
        raw[4:6] = (2).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            rio.load_checkpoint(path)

    def test_foreign_file_rejected(self, tmp_path):
        path = tmp_path / "foreign.rswt"
        path.write_bytes(b"RTNS" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            rio.load_checkpoint(path)

    def test_tensor_count_mismatch_rejected(self, tmp_path, tiny_model):
        import struct

        path = tmp_path / "m.rswt"
        rio.save_checkpoint(tiny_model, path)
        raw = bytearray(path.read_bytes())
        header_len = struct.unpack("<I", raw[6:10])[0]
        count_at = 10 + header_len
        raw[count_at : count_at + 4] = struct.pack("<I", 2)
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="tensors"):
            rio.load_checkpoint(path)


class TestPipelineText:
    def test_round_trip(self):
        pipe = TransformPipeline(
            specs=(
                TransformSpec.gaussian_noise(0.25),
                TransformSpec.rotation(float(np.pi / 2)),
                TransformSpec.crop(10, 10),
                TransformSpec.hflip(),
                TransformSpec.brightness(0.1),
            ),
            mode="composition",
            seed=123,
        )
        text = rio.format_pipeline(pipe)
        back = rio.parse_pipeline(text)
        assert back == pipe

    def test_parse_rejects_garbage(self):
        with pytest.raises(FormatError):
            rio.parse_pipeline("gaussian_noise sigma\n")
        with pytest.raises(FormatError):
            rio.parse_pipeline("mode composition\n")  # no transforms

    def test_comments_and_blank_lines(self):
        text = "# cfg\nmode composition\n\nseed 5\nblur sigma=1.0\n"
        pipe = rio.parse_pipeline(text)
        assert pipe.mode == "composition" and pipe.seed == 5
        assert pipe.specs[0].kind == "blur"

    def test_file_round_trip(self, tmp_path):
        pipe = TransformPipeline(specs=(TransformSpec.blur(2.0),), mode="single_random", seed=9)
        path = tmp_path / "pipe.txt"
        rio.save_pipeline(pipe, path)
        assert rio.load_pipeline(path) == pipe


class TestCsv:
    def test_header_only_for_empty(self, tmp_path):
        path = tmp_path / "r.csv"
        rio.write_report_csv_with_header(["a", "b"], [], path)
        assert path.read_bytes() == b"a,b\r\n"

    def test_round_trip_to_serialized_precision(self, tmp_path):
        import csv

        rows = [{"x": 1.0 / 3.0, "n": 7, "s": 'tricky,"quoted"'}]
        path = tmp_path / "r.csv"
        rio.write_report_csv(rows, path)
        with open(path, newline="") as fh:
            parsed = list(csv.DictReader(fh))
        assert parsed[0]["s"] == 'tricky,"quoted"'
        assert int(parsed[0]["n"]) == 7
        assert abs(float(parsed[0]["x"]) - 1.0 / 3.0) < 1e-9

    def test_nine_significant_digits(self, tmp_path):
        path = tmp_path / "r.csv"
        rio.write_report_csv([{"v": 0.123456789123}], path)
        assert "0.123456789" in path.read_text()

    def test_heterogeneous_rows_rejected(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            rio.write_report_csv([{"a": 1}, {"b": 2}], tmp_path / "x.csv")
