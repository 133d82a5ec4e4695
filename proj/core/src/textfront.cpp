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

#include "kidvoice/textfront.hpp"

#include "kidvoice/common.hpp"
#include "kidvoice/unicode.hpp"

namespace kidvoice::textfront {

int language_token(Language lang) { return kLangZh + static_cast<int>(lang); }

bool is_language_token(int id) { return id >= kLangZh && id <= kLangTa; }

Language language_of_token(int id) {
    if (!is_language_token(id)) throw DataError("token " + std::to_string(id) + " is not a language identifier");
    return static_cast<Language>(id - kLangZh);
}

TextTokenSeq encode_text(const std::string& text, Language lang) {
    if (text.empty()) throw DataError("empty text");
    const std::string normalized = unicode::nfc(text);
    if (normalized.size() > kMaxTextBytes) {
        throw DataError("text exceeds 512 bytes (" + std::to_string(normalized.size()) + ")");
    }
    TextTokenSeq seq;
    seq.language = lang;
    seq.tokens.reserve(normalized.size() + 1);
    seq.tokens.push_back(language_token(lang));
    for (unsigned char b : normalized) seq.tokens.push_back(b);
    return seq;
}

std::pair<std::string, Language> decode_text(const TextTokenSeq& seq) {
    if (seq.tokens.empty() || !is_language_token(seq.tokens.front())) {
        throw DataError("language identifier must lead");
    }
    std::string bytes;
    for (size_t i = 1; i < seq.tokens.size(); ++i) {
        const int t = seq.tokens[i];
        if (is_language_token(t)) throw DataError("duplicated language identifier");
        if (t < 0 || t > 255) throw DataError("token " + std::to_string(t) + " is not a text byte");
        bytes.push_back(static_cast<char>(t));
    }
    if (!unicode::is_valid_utf8(bytes)) throw DataError("invalid UTF-8 byte run");
    return {bytes, language_of_token(seq.tokens.front())};
}

}  // namespace kidvoice::textfront
