"""Decade total-return tables on a simulated 90-year MMM index.

Real data can be used instead with `longrun backtest --data FILE --format shiller_csv`.
"""

from longrun import backtest as bt
from longrun.cli import synthetic_series
from longrun.models import MmmModel

series = synthetic_series(MmmModel(0.1828, 0.0520), 90, seed=1)
tables = bt.total_return_table(series, bt.STANDARD_STRATEGIES, range(1925, 2015, 10), range(1935, 2016, 10))
for name, report in tables.items():
    print(name)
    print(bt.format_table(report.total_return_matrix, report.start_years, report.end_years))
