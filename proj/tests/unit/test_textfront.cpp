// Copyright 2026 The kidvoice Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kidvoice/common.hpp"
#include "kidvoice/corpus.hpp"
#include "kidvoice/textfront.hpp"
#include "kidvoice/unicode.hpp"

#include <gtest/gtest.h>

#include <functional>

using namespace kidvoice;
using namespace kidvoice::textfront;

namespace {

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const DataError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(EncodeText, AsciiMalay) {
    const auto s = encode_text("a", Language::ma);
    EXPECT_EQ(s.tokens, (std::vector<int>{257, 97}));
    EXPECT_EQ(s.language, Language::ma);
}

TEST(EncodeText, MandarinUtf8Bytes) {
    // U+4E00 = 0100 1110 0000 0000 -> 1110'0100 10'111000 10'000000
    EXPECT_EQ(encode_text("\xe4\xb8\x80", Language::zh).tokens, (std::vector<int>{256, 0xE4, 0xB8, 0x80}));
}

TEST(EncodeText, Errors) {
    EXPECT_NE(error_of([] { encode_text("", Language::ta); }).find("empty text"), std::string::npos);
    EXPECT_FALSE(error_of([] { encode_text("\xff", Language::ta); }).empty());
    EXPECT_FALSE(error_of([] { encode_text(std::string(513, 'a'), Language::ma); }).empty());
    EXPECT_NO_THROW(encode_text(std::string(512, 'a'), Language::ma));
}

TEST(EncodeText, NormalizesToNfc) {
    EXPECT_EQ(encode_text("e\xcc\x81", Language::ma), encode_text("\xc3\xa9", Language::ma));
}

TEST(DecodeText, Examples) {
    const auto [text, lang] = decode_text({{257, 97}, Language::ma});
    EXPECT_EQ(text, "a");
    EXPECT_EQ(lang, Language::ma);
    EXPECT_NE(error_of([] { decode_text({{97, 257}, Language::ma}); }).find("language identifier must lead"),
              std::string::npos);
    EXPECT_FALSE(error_of([] { decode_text({{257, 257, 97}, Language::ma}); }).empty());
    EXPECT_FALSE(error_of([] { decode_text({{257, 300}, Language::ma}); }).empty());
    EXPECT_FALSE(error_of([] { decode_text({{256, 0xE4, 0xB8}, Language::zh}); }).empty());
}

TEST(TextFront, RoundTripOverAlphabets) {
    const auto cfg = corpus::default_corpus_config();
    Rng rng(11);
    for (Language l : kAllLanguages) {
        const auto& entries = cfg.alphabets.at(l).entries;
        for (int trial = 0; trial < 200; ++trial) {
            std::u32string s;
            const auto len = 1 + rng.index(12);
            for (std::size_t i = 0; i < len; ++i) s.push_back(entries[rng.index(entries.size())].character);
            const std::string utf8 = unicode::to_utf8(s);
            const auto [text, lang] = decode_text(encode_text(utf8, l));
            ASSERT_EQ(text, utf8);
            ASSERT_EQ(lang, l);
        }
    }
}

TEST(TextFront, LanguageTokensBijective) {
    EXPECT_EQ(language_token(Language::zh), kLangZh);
    EXPECT_EQ(language_token(Language::ma), kLangMa);
    EXPECT_EQ(language_token(Language::ta), kLangTa);
    for (Language l : kAllLanguages) {
        EXPECT_TRUE(is_language_token(language_token(l)));
        EXPECT_EQ(language_of_token(language_token(l)), l);
    }
    EXPECT_FALSE(is_language_token(97));
    EXPECT_FALSE(is_language_token(kBosSpeech));
}
