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

#include "kidvoice/unicode.hpp"

#include "kidvoice/common.hpp"

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>
#include <unicode/ustring.h>

#include <algorithm>
#include <vector>

namespace kidvoice::unicode {

namespace {

std::u16string to_u16_strict(std::string_view utf8) {
    UErrorCode err = U_ZERO_ERROR;
    int32_t needed = 0;
    u_strFromUTF8WithSub(nullptr, 0, &needed, utf8.data(), static_cast<int32_t>(utf8.size()), U_SENTINEL,
                         nullptr, &err);
    if (err != U_BUFFER_OVERFLOW_ERROR && U_FAILURE(err)) throw DataError("invalid UTF-8 text");
    std::u16string out(static_cast<size_t>(needed), u'\0');
    err = U_ZERO_ERROR;
    u_strFromUTF8WithSub(reinterpret_cast<UChar*>(out.data()), needed, &needed, utf8.data(),
                         static_cast<int32_t>(utf8.size()), U_SENTINEL, nullptr, &err);
    if (U_FAILURE(err)) throw DataError("invalid UTF-8 text");
    return out;
}

}  // namespace

bool is_valid_utf8(std::string_view s) {
    try {
        to_u16_strict(s);
        return true;
    } catch (const DataError&) {
        return false;
    }
}

std::u32string to_u32(std::string_view utf8) {
    const std::u16string u16 = to_u16_strict(utf8);
    UErrorCode err = U_ZERO_ERROR;
    int32_t needed = 0;
    u_strToUTF32(nullptr, 0, &needed, reinterpret_cast<const UChar*>(u16.data()), static_cast<int32_t>(u16.size()),
                 &err);
    std::u32string out(static_cast<size_t>(needed), U'\0');
    err = U_ZERO_ERROR;
    u_strToUTF32(reinterpret_cast<UChar32*>(out.data()), needed, &needed, reinterpret_cast<const UChar*>(u16.data()),
                 static_cast<int32_t>(u16.size()), &err);
    if (U_FAILURE(err)) throw DataError("invalid UTF-8 text");
    return out;
}

std::string to_utf8(std::u32string_view s) {
    std::string out;
    for (char32_t c : s) out += to_utf8(c);
    return out;
}

std::string to_utf8(char32_t c) {
    std::string out;
    icu::UnicodeString(static_cast<UChar32>(c)).toUTF8String(out);
    return out;
}

std::string nfc(std::string_view utf8) {
    // ASCII is its own normal form.
    if (std::all_of(utf8.begin(), utf8.end(), [](char c) { return static_cast<unsigned char>(c) < 0x80; })) {
        return std::string(utf8);
    }
    const std::u16string u16 = to_u16_strict(utf8);
    UErrorCode err = U_ZERO_ERROR;
    const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(err);
    if (U_FAILURE(err)) throw std::runtime_error("ICU NFC normalizer unavailable");
    const icu::UnicodeString src(reinterpret_cast<const UChar*>(u16.data()), static_cast<int32_t>(u16.size()));
    const icu::UnicodeString dst = norm->normalize(src, err);
    if (U_FAILURE(err)) throw DataError("NFC normalization failed");
    std::string out;
    dst.toUTF8String(out);
    return out;
}

}  // namespace kidvoice::unicode
