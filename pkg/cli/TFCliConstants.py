LOG_ENV_VAR = "THERMOFORGE_LOG"
LOG_LEVELS = {"error": 40, "warn": 30, "info": 20, "debug": 10}
DEFAULT_LOG_LEVEL = "warn"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_ERROR = 1
DEFAULT_FAMILY = "carved"
DEFAULT_DIMS = (20, 20, 20)
CURVE_COLUMNS = (
    "epoch",
    "train_mse",
    "test_mse",
    "train_nl2",
    "test_nl2",
    "train_r2",
    "test_r2",
)
REPORT_NAME = "crossval_report.json"
CURVES_SUFFIX = ".curves.csv"
