from __future__ import annotations

import logging
import socket

from mcp.server.fastmcp import FastMCP
from starlette.requests import Request
from starlette.responses import JSONResponse, PlainTextResponse, Response

from .query import DEFAULT_LIMIT, DEFAULT_WINDOW, EmptyKeyword, KeywordQuery, StoreUnavailable

log = logging.getLogger("tweetpipe.server")


class BindError(OSError):
    pass


def _int_param(request: Request, name: str, default: int) -> int:
    raw = request.query_params.get(name)
    if raw is None or raw == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


def create_server(query: KeywordQuery, host: str = "127.0.0.1", port: int = 8080) -> FastMCP:
    """Query API: plain HTTP routes plus the same queries as MCP tools."""
    mcp = FastMCP(name="tweetpipe", host=host, port=port)

    @mcp.custom_route("/health", methods=["GET"])
    async def health(request: Request) -> Response:
        return PlainTextResponse("ok")

    @mcp.custom_route("/top-keywords", methods=["GET"])
    async def top_keywords_route(request: Request) -> Response:
        try:
            window = _int_param(request, "window", DEFAULT_WINDOW)
            limit = _int_param(request, "limit", DEFAULT_LIMIT)
            result = query.top_keywords(window, limit)
        except StoreUnavailable as e:
            return _error(503, str(e))
        except ValueError as e:
            return _error(400, str(e))
        return JSONResponse(result.to_dict())

    @mcp.custom_route("/search", methods=["GET"])
    async def search_route(request: Request) -> Response:
        try:
            window = _int_param(request, "window", DEFAULT_WINDOW)
            hit = query.search_keyword(request.query_params.get("keyword", ""), window)
        except StoreUnavailable as e:
            return _error(503, str(e))
        except (EmptyKeyword, ValueError) as e:
            return _error(400, str(e))
        return JSONResponse({"keyword": hit.keyword, "positive": hit.positive_count, "negative": hit.negative_count})

    @mcp.tool()
    def top_keywords(window: int = DEFAULT_WINDOW, limit: int = DEFAULT_LIMIT) -> dict:
        """
        Top keywords per sentiment over the `window` newest stored tweets.
        Counts are token occurrences; ties are broken alphabetically.
        """
        return query.top_keywords(int(window), int(limit)).to_dict()

    @mcp.tool()
    def search_keyword(keyword: str, window: int = DEFAULT_WINDOW) -> dict:
        """Occurrences of one keyword in positive and negative tweets of the window."""
        hit = query.search_keyword(keyword, int(window))
        return {"keyword": hit.keyword, "positive": hit.positive_count, "negative": hit.negative_count}

    return mcp


def check_bindable(host: str, port: int) -> None:
    try:
        with socket.create_server((host, port)):
            pass
    except OSError as e:
        raise BindError(f"cannot bind {host}:{port}: {e.strerror or e}") from e


def serve(query: KeywordQuery, host: str, port: int) -> None:
    """Serve over HTTP until interrupted."""
    check_bindable(host, port)
    log.info("Query API listening on http://%s:%d", host, port)
    create_server(query, host, port).run(transport="streamable-http")
