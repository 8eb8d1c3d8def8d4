import json

import numpy as np
import pytest

from src.services.parser_service import InterchangeParser
from src.utils.errors import FormatError, MissingModelFile, ParseError, ShapeMismatch


@pytest.fixture
def parser():
    return InterchangeParser()


VALID = "sample_id,t,var_0,var_1\na,0,1.5,2\na,1,3,4\nb,0,-1,0\nb,1,0.25,1e3\n"


class TestSeriesCsv:
    def test_parse_valid_table(self, parser):
        table = parser.parse_series_csv(VALID)
        assert table.sample_ids == ["a", "b"]
        assert table.values.shape == (2, 2, 2)
        assert table.values[1, 1, 1] == 1000.0

    def test_non_numeric_value_reports_line(self, parser):
        with pytest.raises(ParseError) as exc:
            parser.parse_series_csv("sample_id,t,var_0\na,0,1.0\na,1,x\n")
        assert exc.value.line == 3
        assert "line 3" in str(exc.value)

    def test_malformed_first_row(self, parser):
        with pytest.raises(ParseError) as exc:
            parser.parse_series_csv("sample_id,t,var_0\na,0\n")
        assert exc.value.line == 2

    def test_extra_field_reports_line(self, parser):
        with pytest.raises(ParseError) as exc:
            parser.parse_series_csv("sample_id,t,var_0\na,0,1\na,1,2,9\n")
        assert exc.value.line == 3

    @pytest.mark.parametrize("header", ["id,t,var_0", "sample_id,t", "sample_id,t,var_1"])
    def test_bad_header(self, parser, header):
        with pytest.raises(ParseError) as exc:
            parser.parse_series_csv(f"{header}\na,0,1\n")
        assert exc.value.line == 1

    def test_time_index_must_start_at_zero(self, parser):
        with pytest.raises(ParseError) as exc:
            parser.parse_series_csv("sample_id,t,var_0\na,0,1\na,1,2\nb,1,3\nb,2,4\n")
        assert exc.value.line == 4

    def test_samples_must_be_contiguous(self, parser):
        text = "sample_id,t,var_0\na,0,1\na,1,1\nb,0,1\nb,1,1\na,0,1\na,1,1\n"
        with pytest.raises(ParseError) as exc:
            parser.parse_series_csv(text)
        assert exc.value.line == 6

    def test_samples_must_have_equal_length(self, parser):
        with pytest.raises(ParseError) as exc:
            parser.parse_series_csv("sample_id,t,var_0\na,0,1\na,1,2\nb,0,3\n")
        assert exc.value.line == 4

    def test_empty_inputs(self, parser):
        with pytest.raises(ParseError):
            parser.parse_series_csv("")
        with pytest.raises(ParseError):
            parser.parse_series_csv("sample_id,t,var_0\n")

    def test_format_round_trip_is_exact(self, parser, rng, tmp_path):
        values = rng.normal(size=(3, 5, 2)) * 1e3
        path = parser.write_series_csv(tmp_path / "w.csv", ["x", "y", "z"], values)
        table = parser.read_series_csv(path)
        np.testing.assert_array_equal(table.values, values)
        assert parser.format_series_csv(table.sample_ids, table.values) == path.read_text()

    def test_seventeen_digit_values_parse_exactly(self, parser):
        # 17 значащих цифр, включая нижнюю границу нормализованных чисел
        values = np.array([0.1 + 0.2, 1 / 3, 2.2250738585072014e-308, 123456.78901234567, -9.87654321e-13])
        text = "sample_id,t,var_0\n" + "".join(f"s,{i},{float(v)!r}\n" for i, v in enumerate(values))
        np.testing.assert_array_equal(parser.parse_series_csv(text).values[0, :, 0], values)

    def test_missing_file(self, parser, tmp_path):
        with pytest.raises(FormatError):
            parser.read_series_csv(tmp_path / "absent.csv")


class TestPredictionFiles:
    def test_stack_in_roster_order(self, parser, rng, tmp_path):
        arrays = {name: rng.normal(size=(4, 3, 2)).astype(np.float32) for name in ("b_model", "a_model")}
        for name, values in arrays.items():
            parser.write_predictions(tmp_path, name, values)
        roster, stack = parser.read_prediction_stack(tmp_path)
        assert roster == ["a_model", "b_model"]
        assert stack.shape == (4, 2, 3, 2)
        np.testing.assert_array_equal(stack[:, 1], arrays["b_model"])

    def test_missing_model_is_named(self, parser, rng, tmp_path):
        parser.write_predictions(tmp_path, "a", rng.normal(size=(2, 3, 1)))
        with pytest.raises(MissingModelFile) as exc:
            parser.read_prediction_stack(tmp_path, ["a", "ghost"])
        assert "ghost" in str(exc.value)
        assert exc.value.context["model"] == "ghost"

    @pytest.mark.parametrize("suffix", [".json", ".f32"])
    def test_half_written_model_is_not_dropped(self, parser, rng, tmp_path, suffix):
        for name in ("a", "b", "c"):
            parser.write_predictions(tmp_path, name, rng.normal(size=(3, 4, 1)))
        (tmp_path / f"c{suffix}").unlink()
        assert parser.discover_roster(tmp_path) == ["a", "b", "c"]
        with pytest.raises(MissingModelFile) as exc:
            parser.read_prediction_stack(tmp_path)
        assert exc.value.context["model"] == "c"

    def test_payload_shape_mismatch(self, parser, rng, tmp_path):
        parser.write_predictions(tmp_path, "a", rng.normal(size=(2, 3, 1)))
        (tmp_path / "a.f32").write_bytes((tmp_path / "a.f32").read_bytes()[:-2])
        with pytest.raises(ShapeMismatch):
            parser.read_predictions(tmp_path, "a")

    def test_models_disagree_on_shape(self, parser, rng, tmp_path):
        parser.write_predictions(tmp_path, "a", rng.normal(size=(2, 3, 1)))
        parser.write_predictions(tmp_path, "b", rng.normal(size=(2, 4, 1)))
        with pytest.raises(ShapeMismatch):
            parser.read_prediction_stack(tmp_path)

    def test_bad_sidecar(self, parser, rng, tmp_path):
        parser.write_predictions(tmp_path, "a", rng.normal(size=(2, 3, 1)))
        (tmp_path / "a.json").write_text(json.dumps({"shape": [6]}))
        with pytest.raises(FormatError):
            parser.read_predictions(tmp_path, "a")

    def test_empty_directory(self, parser, tmp_path):
        with pytest.raises(MissingModelFile):
            parser.discover_roster(tmp_path)
