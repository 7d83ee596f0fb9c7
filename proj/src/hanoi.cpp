#include "leakgnn/graph.hpp"

namespace leakgnn {

// Hanoi benchmark network: 32 junctions, 34 pipes, three loops fed from a
// single source line.  Pairs are zero-based node indices; labels "1".."32"
// and "P1".."P34" are assigned by from_edge_list.
const WdnGraph& hanoi() {
    static const WdnGraph g = from_edge_list(
        32, {
                {0, 1},   {1, 2},   {2, 3},   {3, 4},   {4, 5},   {5, 6},
                {6, 7},   {7, 8},   {8, 9},   {9, 10},  {10, 11}, {11, 12},
                {9, 13},  {13, 14}, {14, 15}, {15, 16}, {16, 17}, {17, 18},
                {18, 2},  {2, 19},  {19, 20}, {20, 21}, {19, 22}, {22, 23},
                {23, 24}, {24, 25}, {25, 26}, {26, 15}, {22, 27}, {27, 28},
                {28, 29}, {29, 30}, {30, 31}, {31, 24},
            });
    return g;
}

}  // namespace leakgnn
