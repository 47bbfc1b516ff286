import logging
from typing import Any

import flask
import numpy as np
from flask import Flask

from derand.applications import Graph, SetSystem
from derand.config import FixingConfig
from derand.error import InvalidArgument
from derand.instances import parse_instance_text
from derand.matrix import ConstraintMatrix
from derand.report import finite_json
from derand.runner import run_fix, scaled_delta
from derand.utils import rounding_response

logger = logging.getLogger(__name__)

def as_matrix (instance: ConstraintMatrix | SetSystem | Graph) -> ConstraintMatrix:
    if isinstance(instance, SetSystem):
        return instance.to_matrix()

    if isinstance(instance, ConstraintMatrix):
        return instance

    raise InvalidArgument("Rounding needs a matrix or a set system, got a graph")

def _probabilities (body: dict[str, Any], n: int) -> np.ndarray:
    p = body.get("p", 0.5)
    if isinstance(p, list):
        if len(p) != n:
            raise InvalidArgument(f"Expected {n} probabilities, got {len(p)}")

        return np.asarray(p, dtype=np.float64)

    return np.full(n, float(p))

def handle_fix (body: dict[str, Any], config: FixingConfig) -> dict[str, Any]:
    """
    Runs one rounding request.

    :param body: ``instance`` text, ``mode``, ``k``, ``p`` (number or list) and either
        ``delta`` (list) or ``delta_scale``; ``profile`` selects other constants
    :return: The run report with the output vector
    """
    if not isinstance(body, dict) or "instance" not in body:
        raise InvalidArgument("Request body must be a JSON object with an 'instance'")

    if "profile" in body:
        config = FixingConfig.for_profile(body["profile"], threads=config.threads)

    A = as_matrix(parse_instance_text(body["instance"]))
    p = _probabilities(body, A.n)

    if "delta" in body:
        delta = np.asarray(body["delta"], dtype=np.float64)

    else:
        delta = scaled_delta(A, p, float(body.get("delta_scale", 0.3)))

    q, report = run_fix(A, p, delta, body.get("mode", "chernoff"), int(body.get("k", 64)), config)
    report.q = q.tolist()

    return finite_json(report.to_dict(encode_json=True))

def create_app (config: FixingConfig | None = None, flask_config: object = None) -> Flask:
    """
    Creates the Flask app serving rounding requests.

    :param config: Constants used when a request names no profile
    :param flask_config: Flask config, defaults to None
    :return: Flask app
    """
    config = config or FixingConfig.for_profile("practical")
    app = Flask(__name__)
    app.config.from_object(flask_config)

    @app.route("/fix", methods=["POST"])
    @rounding_response
    def fix ():
        return handle_fix(flask.request.get_json(silent=True), config)

    @app.route("/healthcheck", methods=["GET"])
    def healthcheck ():
        return "Everything all right!"

    return app
