import logging
from collections.abc import Callable, Mapping
from functools import wraps

from flask import jsonify

from derand.error import DerandError, InvalidArgument, ParseError, RegimeError

logger = logging.getLogger(__name__)

#: HTTP status of every rounding error a request can cause, most specific first
ERROR_STATUS: tuple[tuple[type[DerandError], int], ...] = (
    (InvalidArgument, 400),
    (ParseError, 400),
    (RegimeError, 422),
)

def error_status (exc: Exception) -> int:
    for kind, status in ERROR_STATUS:
        if isinstance(exc, kind):
            return status

    return 500

def rounding_response (view: Callable):
    """
    Wraps a rounding view: report payloads become JSON with status 200, rounding
    errors become a JSON error body with the status of :data:`ERROR_STATUS`.

    :param view: View returning a report mapping
    :return: The wrapped view
    """
    @wraps(view)
    def respond (*args, **kwargs):
        try:
            payload = view(*args, **kwargs)

        except Exception as exc:
            status = error_status(exc)
            if status == 500:
                logger.exception(f"Rounding request failed: {exc}")

            message = exc.message if isinstance(exc, DerandError) else str(exc)
            body = { "status": "error", "error": type(exc).__name__, "message": message }

            return jsonify(body), status

        if isinstance(payload, Mapping):
            payload = jsonify(payload)

        return payload, 200

    return respond
