import unittest
from unittest.mock import MagicMock

from sqlalchemy.orm import Session

from src.entity.model import DropResult, Sweep
from src.repository.results import (add_drop_results, create_sweep, get_drop_results, get_latest_sweep,
                                    get_sweep)
from src.schemas.config import SimConfig
from src.schemas.sweep import DropRow, SweepSpec


class TestResults(unittest.TestCase):

    def setUp(self) -> None:
        self.session = MagicMock(spec=Session)
        self.spec = SweepSpec(C_values=[18.0, 24.0], schemes=["d-RS+IRS"], drops=3, config=SimConfig(seed=9))
        self.row = DropRow(scheme="d-RS+IRS", C_total=18.0, drop=0, status="converged", ee=1.2, rate_total=6.0,
                           rate_common=1.5, p_tr=1.0, p_fh=0.5, p_total=5.0, losc=4, outer_iterations=3,
                           channel_hash="abc")

    def test_create_sweep(self):
        result = create_sweep(self.spec, self.session)
        self.assertIsInstance(result, Sweep)
        self.assertEqual(result.seed, 9)
        self.assertEqual(result.drops, 3)
        self.assertEqual(result.spec["C_values"], [18.0, 24.0])
        self.session.add.assert_called_once_with(result)
        self.session.commit.assert_called_once()
        self.session.refresh.assert_called_once_with(result)

    def test_get_sweep(self):
        sweep = Sweep(id=1, spec={}, seed=0, drops=1)
        mocked_sweep = MagicMock()
        mocked_sweep.scalar_one_or_none.return_value = sweep
        self.session.execute.return_value = mocked_sweep

        self.assertEqual(get_sweep(1, self.session), sweep)

    def test_get_latest_sweep_none(self):
        mocked_sweep = MagicMock()
        mocked_sweep.scalar_one_or_none.return_value = None
        self.session.execute.return_value = mocked_sweep

        self.assertIsNone(get_latest_sweep(self.session))

    def test_add_drop_results(self):
        result = add_drop_results(7, [self.row, self.row.model_copy(update={"drop": 1})], self.session)
        self.assertEqual(len(result), 2)
        self.assertTrue(all(isinstance(r, DropResult) for r in result))
        self.assertEqual([r.drop for r in result], [0, 1])
        self.assertEqual(result[0].sweep_id, 7)
        self.assertEqual(result[0].channel_hash, "abc")
        self.session.add_all.assert_called_once_with(result)
        self.session.commit.assert_called_once()

    def test_get_drop_results(self):
        rows = [DropResult(id=1, sweep_id=1, **self.row.model_dump())]
        mocked_rows = MagicMock()
        mocked_rows.scalars.return_value.all.return_value = rows
        self.session.execute.return_value = mocked_rows

        result = get_drop_results(1, self.session, scheme="d-RS+IRS", C_total=18.0)
        self.assertEqual(result, rows)
        self.assertEqual(DropRow.model_validate(result[0]), self.row)
