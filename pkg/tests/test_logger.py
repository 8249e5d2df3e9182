import logging

from logger import get_logger, run_logger, set_level


class TestRunContext:
    def test_prefix(self):
        msg, kwargs = run_logger("tests.run", fp="abc123", seed=3).process("старт", {})
        assert msg == "[fp=abc123 seed=3] старт"
        assert kwargs == {}

    def test_shared_handlers(self):
        a = get_logger("tests.a")
        b = get_logger("tests.b")
        assert a.handlers == b.handlers
        assert a.propagate is False


class TestSetLevel:
    def test_applies_to_existing_loggers(self):
        logger = get_logger("tests.level")
        before = logger.level
        try:
            set_level("debug")
            assert logger.level == logging.DEBUG
        finally:
            logger.setLevel(before)
