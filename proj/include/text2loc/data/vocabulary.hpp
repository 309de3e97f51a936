#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace text2loc::data {

/* Dense word ids for the hint template grammar */
class Vocabulary
{
public:
    static constexpr std::uint32_t kPad = 0;
    static constexpr std::uint32_t kUnk = 1;

    /* <pad>, <unk>, glue words, directions, colors, classes */
    static Vocabulary build_default();

    explicit Vocabulary(std::vector<std::string> words);

    std::size_t size() const { return words_.size(); }
    /* kUnk for out-of-vocabulary words */
    std::uint32_t id(std::string_view word) const;
    const std::string& word(std::uint32_t id) const;
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::uint32_t> ids_;
};

/* Splits on ASCII whitespace; ValueError on text with no words */
std::vector<std::uint32_t> tokenize(std::string_view text, const Vocabulary& vocab);

/* Words joined by single spaces */
std::string detokenize(std::span<const std::uint32_t> ids, const Vocabulary& vocab);

} // namespace text2loc::data
