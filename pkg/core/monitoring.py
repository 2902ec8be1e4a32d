"""GlitchTip / Sentry reporting for command-line runs.

GlitchTip speaks the Sentry protocol, so runs report through ``sentry-sdk``.
A command that raises is sent as an Issue; INFO and WARNING records
(sequence summaries, missing embeddings) go to structured Logs, tagged with
the subcommand that produced them.

Environment:

    GLITCHTIP_DSN=https://<key>@glitchtip.example.com/<project-id>
    ENVIRONMENT=production   # default "production"
    SERVICE_NAME=deconfuse   # default "deconfuse"

Without a DSN nothing is sent.
"""

from __future__ import annotations

import logging
import os
from typing import Optional

try:
    import sentry_sdk
    import sentry_sdk.logger as sentry_logger
    from sentry_sdk.integrations.logging import LoggingIntegration
except ImportError:
    sentry_sdk = None
    sentry_logger = None
    LoggingIntegration = None

log = logging.getLogger(__name__)

_initialized = False

_LEVELS = {
    logging.DEBUG: "debug",
    logging.INFO: "info",
    logging.WARNING: "warning",
    logging.ERROR: "error",
    logging.CRITICAL: "fatal",
}


class SentryLogsHandler(logging.Handler):
    """Mirror records into GlitchTip Logs; ERROR and above also open an Issue."""

    def __init__(self, attributes: dict[str, str], level: int = logging.INFO):
        super().__init__(level=level)
        self.attributes = attributes

    def emit(self, record: logging.LogRecord) -> None:
        try:
            name = _LEVELS.get(record.levelno) or ("error" if record.levelno > logging.WARNING else "info")
            getattr(sentry_logger, name)(self.format(record), attributes=self.attributes)
            if record.levelno < logging.ERROR:
                return
            if record.exc_info and record.exc_info[1] is not None:
                sentry_sdk.capture_exception(record.exc_info[1])
            else:
                sentry_sdk.capture_message(record.getMessage(), level="error")
        except Exception:
            self.handleError(record)


def init_sentry(command: Optional[str] = None) -> bool:
    """Start reporting if GLITCHTIP_DSN is set. Safe to call more than once.

    Returns whether monitoring is on.
    """
    global _initialized
    if _initialized:
        return True

    dsn = os.environ.get("GLITCHTIP_DSN")
    if not dsn:
        log.debug("GlitchTip monitoring disabled (no GLITCHTIP_DSN configured)")
        return False
    if sentry_sdk is None:
        log.warning("GLITCHTIP_DSN is set but sentry-sdk is not installed; monitoring disabled")
        return False

    environment = os.environ.get("ENVIRONMENT") or "production"
    service_name = os.environ.get("SERVICE_NAME") or "deconfuse"

    sentry_sdk.init(
        dsn=dsn,
        environment=environment,
        server_name=service_name,
        # Records reach GlitchTip through SentryLogsHandler only.
        enable_logs=True,
        disabled_integrations=[LoggingIntegration()],
        traces_sample_rate=0.0,
        send_default_pii=False,
    )
    sentry_sdk.set_tag("service.name", service_name)
    attributes = {"service.name": service_name, "environment": environment}
    if command:
        sentry_sdk.set_tag("command", command)
        attributes["command"] = command

    # Per-frame DEBUG lines stay local.
    logging.getLogger().addHandler(SentryLogsHandler(attributes))

    _initialized = True
    log.info(
        "GlitchTip monitoring enabled (service.name=%s, environment=%s, command=%s)",
        service_name, environment, command or "-",
    )
    return True


def capture_exception(err: BaseException) -> None:
    """Send an exception that escaped a command. No-op while monitoring is off."""
    if _initialized:
        sentry_sdk.capture_exception(err)


def flush(timeout: float = 2.0) -> None:
    if _initialized:
        sentry_sdk.flush(timeout=timeout)
