#ifndef TEMPO_TYPES_HPP_
#define TEMPO_TYPES_HPP_

#include <cstdint>
#include <vector>

namespace tempo {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

}  // namespace tempo

#endif  // TEMPO_TYPES_HPP_
