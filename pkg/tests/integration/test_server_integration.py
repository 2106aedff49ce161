import socket

import pytest
from starlette.testclient import TestClient

from tweetpipe.classifier import Sentiment
from tweetpipe.query import EmptyKeyword, KeywordQuery
from tweetpipe.rows import Row
from tweetpipe.server import BindError, check_bindable, create_server
from tweetpipe.store import ColumnFamily, StoreView

pytestmark = pytest.mark.integration


@pytest.fixture
def anyio_backend():
    return "asyncio"


@pytest.fixture
def store(temp_dir):
    """A column family with a few classified tweets."""
    cf = ColumnFamily.recover(temp_dir / "analytics" / "tweets", sync=False)
    cf.write_batch([
        Row("a", "great concert tonight", Sentiment.POSITIVE, 1),
        Row("b", "great fun", Sentiment.POSITIVE, 2),
        Row("c", "great disappointment", Sentiment.NEGATIVE, 3),
    ])
    yield cf
    cf.close()


@pytest.fixture
def server(store):
    return create_server(KeywordQuery(store))


@pytest.fixture
def client(server):
    return TestClient(server.sse_app())


class TestHttpRoutes:
    """Plain HTTP query endpoints."""

    def test_health(self, client):
        """Test the health endpoint answers ok."""
        r = client.get("/health")
        assert r.status_code == 200
        assert r.text == "ok"

    def test_top_keywords(self, client):
        """Test top keywords come back per sentiment."""
        r = client.get("/top-keywords", params={"limit": 2})
        assert r.status_code == 200
        assert r.json() == {
            "positive": [{"keyword": "great", "count": 2}, {"keyword": "concert", "count": 1}],
            "negative": [{"keyword": "disappointment", "count": 1}, {"keyword": "great", "count": 1}],
        }

    def test_top_keywords_window(self, client):
        """Test the window parameter restricts to the newest rows."""
        r = client.get("/top-keywords", params={"window": 1})
        assert r.json()["positive"] == []

    def test_search(self, client):
        """Test keyword search counts both sentiments."""
        r = client.get("/search", params={"keyword": "Great"})
        assert r.status_code == 200
        assert r.json() == {"keyword": "great", "positive": 2, "negative": 1}

    @pytest.mark.parametrize("path,params", [
        ("/search", {}),
        ("/search", {"keyword": "   "}),
        ("/search", {"keyword": "great", "window": "abc"}),
        ("/top-keywords", {"window": "0"}),
        ("/top-keywords", {"limit": "-3"}),
    ])
    def test_bad_request(self, client, path, params):
        """Test invalid parameters give 400 with an error message."""
        r = client.get(path, params=params)
        assert r.status_code == 400
        assert "error" in r.json()

    def test_store_unavailable(self, store, client):
        """Test a closed store gives 503."""
        store.close()
        assert client.get("/top-keywords").status_code == 503
        assert client.get("/search", params={"keyword": "great"}).status_code == 503


class TestLiveView:
    """The query API over a read-only view while the pipeline keeps writing."""

    def test_view_follows_writer(self, store):
        """Test rows written and flushed after the server started are counted."""
        view = StoreView.open(store.directory)
        client = TestClient(create_server(KeywordQuery(view)).sse_app())
        try:
            assert client.get("/search", params={"keyword": "great"}).json()["positive"] == 2
            store.write(Row("d", "great weather", Sentiment.POSITIVE, 4))
            store.flush()
            store.write(Row("e", "great again", Sentiment.POSITIVE, 5))
            assert client.get("/search", params={"keyword": "great"}).json() == {
                "keyword": "great", "positive": 4, "negative": 1,
            }
            assert client.get("/top-keywords", params={"window": 2, "limit": 1}).json()["positive"] == [
                {"keyword": "great", "count": 2},
            ]
        finally:
            view.close()
        assert client.get("/health").status_code == 200
        assert client.get("/top-keywords").status_code == 503


class TestMcpTools:
    """The same queries exposed as MCP tools."""

    @pytest.mark.anyio
    async def test_tools_listed(self, server):
        """Test both query tools are registered."""
        names = {t.name for t in await server.list_tools()}
        assert {"top_keywords", "search_keyword"} <= names

    def test_top_keywords_tool(self, server):
        """Test the top_keywords tool returns the HTTP payload shape."""
        result = server._tool_manager.get_tool("top_keywords").fn(window=200, limit=1)
        assert result == {"positive": [{"keyword": "great", "count": 2}],
                          "negative": [{"keyword": "disappointment", "count": 1}]}

    def test_search_keyword_tool(self, server):
        """Test the search_keyword tool."""
        result = server._tool_manager.get_tool("search_keyword").fn(keyword="fun")
        assert result == {"keyword": "fun", "positive": 1, "negative": 0}

    def test_search_keyword_tool_empty(self, server):
        """Test the tool rejects an empty keyword."""
        with pytest.raises(EmptyKeyword):
            server._tool_manager.get_tool("search_keyword").fn(keyword=" ")


class TestBind:
    """Port checks before serving."""

    def test_port_in_use(self):
        """Test binding an occupied port fails with BindError."""
        with socket.create_server(("127.0.0.1", 0)) as s:
            port = s.getsockname()[1]
            with pytest.raises(BindError):
                check_bindable("127.0.0.1", port)
