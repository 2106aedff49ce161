import pytest

from tweetpipe.text import TokenPipeline, default_stopwords, preprocess


class TestTokenize:
    """Tweet preprocessing rules."""

    def test_lowercase_and_stopwords(self):
        """Test tokens are lowercased and stopwords dropped."""
        assert preprocess("What a GREAT Day") == ["great", "day"]

    def test_urls_dropped(self):
        """Test http, https and www tokens are removed."""
        text = "check http://x.co/a https://t.co/b www.example.com now"
        assert preprocess(text) == ["check", "now"]

    def test_edge_punctuation_stripped(self):
        """Test punctuation is stripped from token edges only."""
        assert preprocess('"amazing!!!" (concert) #music @band rock\'n\'roll') == [
            "amazing", "concert", "music", "band", "rock'n'roll",
        ]

    def test_punctuation_only_tokens_dropped(self):
        """Test a token made of punctuation disappears."""
        assert preprocess("wow ... !!! :) -- yay") == ["wow", "yay"]

    def test_numbers_dates_times_dropped(self):
        """Test numbers, dates and times are removed."""
        assert preprocess("meet 10:30 on 2019-05-04 or 5/4/2019 for 3.5 hours 1,000") == ["meet", "hours"]

    def test_alphanumeric_kept(self):
        """Test tokens mixing letters and digits are kept."""
        assert preprocess("iphone11 4ever") == ["iphone11", "4ever"]

    def test_empty_text(self):
        """Test empty and whitespace-only texts give no tokens."""
        assert preprocess("") == []
        assert preprocess("   \t ") == []

    def test_url_prefix_checked_before_punctuation(self):
        """Test a URL wrapped in punctuation is still stripped, not dropped."""
        # The token starts with '(' so it is not recognized as a URL.
        assert preprocess("(www.site.org)") == ["www.site.org"]


class TestStopwords:
    """Stopword list handling."""

    def test_default_list_loaded(self):
        """Test the shipped list contains common words and twitter noise."""
        words = default_stopwords()
        assert {"the", "a", "is", "rt"} <= words
        assert "great" not in words

    def test_custom_stopwords(self):
        """Test a custom stopword set replaces the default."""
        pipeline = TokenPipeline.with_stopwords(["Day"])
        assert pipeline.tokenize("the day") == ["the"]

    def test_pipeline_is_hashable_value(self):
        """Test two default pipelines are equal."""
        assert TokenPipeline() == TokenPipeline()

    @pytest.mark.parametrize("token", ["http://a", "https://b", "www.c"])
    def test_is_url(self, token):
        """Test URL prefix recognition."""
        assert TokenPipeline().is_url(token)
