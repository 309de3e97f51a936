#include "text2loc/data/vocabulary.hpp"

#include "text2loc/common/errors.hpp"
#include "text2loc/data/dataset.hpp"

namespace text2loc::data {

Vocabulary Vocabulary::build_default()
{
    std::vector<std::string> words { "<pad>", "<unk>", "the", "pose", "is", "of", "a" };
    for (auto w : kDirectionNames) {
        words.emplace_back(w);
    }
    for (auto w : kColorNames) {
        words.emplace_back(w);
    }
    for (auto w : kClassNames) {
        words.emplace_back(w);
    }
    return Vocabulary(std::move(words));
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words))
{
    if (words_.size() < 2 || words_[kPad] != "<pad>" || words_[kUnk] != "<unk>") {
        throw ValueError("vocabulary must start with <pad> and <unk>");
    }
    for (std::uint32_t i = 0; i < words_.size(); ++i) {
        if (!ids_.emplace(words_[i], i).second) {
            throw ValueError("duplicate vocabulary word '" + words_[i] + "'");
        }
    }
}

std::uint32_t Vocabulary::id(std::string_view word) const
{
    auto it = ids_.find(std::string(word));
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(std::uint32_t id) const
{
    if (id >= words_.size()) {
        throw ValueError("token id " + std::to_string(id) + " outside vocabulary of "
                         + std::to_string(words_.size()));
    }
    return words_[id];
}

std::vector<std::uint32_t> tokenize(std::string_view text, const Vocabulary& vocab)
{
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
    std::vector<std::uint32_t> ids;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) {
            ++i;
        }
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) {
            ++j;
        }
        if (j > i) {
            ids.push_back(vocab.id(text.substr(i, j - i)));
        }
        i = j;
    }
    if (ids.empty()) {
        throw ValueError("cannot tokenize empty text");
    }
    return ids;
}

std::string detokenize(std::span<const std::uint32_t> ids, const Vocabulary& vocab)
{
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += vocab.word(ids[i]);
    }
    return out;
}

} // namespace text2loc::data
