"""Population frames and delimited-file ingestion."""

import numpy as np
import pytest

from rfsurvey import DataError, PopulationFrame, read_population


class TestPopulationFrame:
    def test_basic(self, rng):
        x = rng.normal(size=(10, 2))
        frame = PopulationFrame(x, ("a", "b"), {"y": rng.normal(size=10)})
        assert frame.n_units == 10
        assert frame.n_predictors == 2
        assert (frame.unit_ids == np.arange(1, 11)).all()
        assert frame.select_predictors(["b"]).shape == (10, 1)

    def test_invariants(self, rng):
        with pytest.raises(DataError):
            PopulationFrame(np.empty((0, 1)), ("a",), {})
        with pytest.raises(DataError):
            PopulationFrame(np.array([[np.inf]]), ("a",), {})
        with pytest.raises(DataError):
            PopulationFrame(np.ones((3, 1)), ("a",), {"y": np.ones(2)})
        with pytest.raises(DataError):
            PopulationFrame(np.ones((3, 1)), ("a", "b"), {})

    def test_unknown_lookup(self):
        frame = PopulationFrame(np.ones((2, 1)), ("a",), {})
        with pytest.raises(DataError):
            frame.study("nope")
        with pytest.raises(DataError):
            frame.select_predictors(["nope"])


class TestReadPopulation:
    def write(self, path, text):
        path.write_text(text)
        return path

    def test_basic_csv(self, tmp_path):
        p = self.write(tmp_path / "pop.csv",
                       "id,x1,x2,y,region\n"
                       "u1,0.5,1.0,3.0,north\n"
                       "u2,0.25,2.0,4.0,south\n"
                       "u3,0.75,3.0,5.0,north\n")
        frame, strata = read_population(p, study=["y"], id_column="id",
                                        strata_column="region")
        assert frame.predictor_names == ("x1", "x2")
        assert frame.study("y") == pytest.approx([3.0, 4.0, 5.0])
        assert (frame.unit_ids == ["u1", "u2", "u3"]).all()
        assert (strata == ["north", "south", "north"]).all()

    def test_explicit_predictors_and_delimiter(self, tmp_path):
        p = self.write(tmp_path / "pop.txt",
                       "a;b;y\n1;2;3\n4;5;6\n")
        frame, _ = read_population(p, predictors=["b"], study=["y"],
                                   delimiter=";")
        assert frame.predictor_names == ("b",)
        assert frame.predictors[:, 0] == pytest.approx([2.0, 5.0])

    def test_errors(self, tmp_path):
        p = self.write(tmp_path / "bad.csv", "a,b\n1\n")
        with pytest.raises(DataError, match="row 2"):
            read_population(p)
        p2 = self.write(tmp_path / "bad2.csv", "a,b\n1,x\n")
        with pytest.raises(DataError, match="column 'b'"):
            read_population(p2)
        p3 = self.write(tmp_path / "bad3.csv", "a,b\n1,2\n")
        with pytest.raises(DataError, match="not in header"):
            read_population(p3, study=["nope"])
