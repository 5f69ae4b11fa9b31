//! Backbone topologies written against [`Graph`].
//!
//! The Inception-v3 layer order follows the Keras applications builder so that
//! exported weights can be matched by creation index.

use super::graph::{Graph, Padding};

use Padding::{Same, Valid};

/// Inception-v3 convolutional trunk (no classifier), ending at `mixed10`.
pub fn inception_v3<G: Graph>(g: &mut G, input: G::T) -> G::T {
    let mut x = g.conv(&input, 32, 3, 3, 2, Valid);
    x = g.conv(&x, 32, 3, 3, 1, Valid);
    x = g.conv(&x, 64, 3, 3, 1, Same);
    x = g.max_pool(&x, 3, 2);
    x = g.conv(&x, 80, 1, 1, 1, Valid);
    x = g.conv(&x, 192, 3, 3, 1, Valid);
    x = g.max_pool(&x, 3, 2);

    // mixed0..2: 35 x 35
    for pool_features in [32, 64, 64] {
        let b1 = g.conv(&x, 64, 1, 1, 1, Same);
        let b5 = g.conv(&x, 48, 1, 1, 1, Same);
        let b5 = g.conv(&b5, 64, 5, 5, 1, Same);
        let b3 = g.conv(&x, 64, 1, 1, 1, Same);
        let b3 = g.conv(&b3, 96, 3, 3, 1, Same);
        let b3 = g.conv(&b3, 96, 3, 3, 1, Same);
        let bp = g.avg_pool_same(&x, 3);
        let bp = g.conv(&bp, pool_features, 1, 1, 1, Same);
        x = g.concat(&[b1, b5, b3, bp]);
    }

    // mixed3: reduction to 17 x 17
    {
        let b3 = g.conv(&x, 384, 3, 3, 2, Valid);
        let bd = g.conv(&x, 64, 1, 1, 1, Same);
        let bd = g.conv(&bd, 96, 3, 3, 1, Same);
        let bd = g.conv(&bd, 96, 3, 3, 2, Valid);
        let bp = g.max_pool(&x, 3, 2);
        x = g.concat(&[b3, bd, bp]);
    }

    // mixed4..7: factorized 7x7
    for width in [128, 160, 160, 192] {
        let b1 = g.conv(&x, 192, 1, 1, 1, Same);
        let b7 = g.conv(&x, width, 1, 1, 1, Same);
        let b7 = g.conv(&b7, width, 1, 7, 1, Same);
        let b7 = g.conv(&b7, 192, 7, 1, 1, Same);
        let bd = g.conv(&x, width, 1, 1, 1, Same);
        let bd = g.conv(&bd, width, 7, 1, 1, Same);
        let bd = g.conv(&bd, width, 1, 7, 1, Same);
        let bd = g.conv(&bd, width, 7, 1, 1, Same);
        let bd = g.conv(&bd, 192, 1, 7, 1, Same);
        let bp = g.avg_pool_same(&x, 3);
        let bp = g.conv(&bp, 192, 1, 1, 1, Same);
        x = g.concat(&[b1, b7, bd, bp]);
    }

    // mixed8: reduction to 8 x 8
    {
        let b3 = g.conv(&x, 192, 1, 1, 1, Same);
        let b3 = g.conv(&b3, 320, 3, 3, 2, Valid);
        let b7 = g.conv(&x, 192, 1, 1, 1, Same);
        let b7 = g.conv(&b7, 192, 1, 7, 1, Same);
        let b7 = g.conv(&b7, 192, 7, 1, 1, Same);
        let b7 = g.conv(&b7, 192, 3, 3, 2, Valid);
        let bp = g.max_pool(&x, 3, 2);
        x = g.concat(&[b3, b7, bp]);
    }

    // mixed9..10: expanded filter banks
    for _ in 0..2 {
        let b1 = g.conv(&x, 320, 1, 1, 1, Same);
        let b3 = g.conv(&x, 384, 1, 1, 1, Same);
        let b3a = g.conv(&b3, 384, 1, 3, 1, Same);
        let b3b = g.conv(&b3, 384, 3, 1, 1, Same);
        let b3 = g.concat(&[b3a, b3b]);
        let bd = g.conv(&x, 448, 1, 1, 1, Same);
        let bd = g.conv(&bd, 384, 3, 3, 1, Same);
        let bda = g.conv(&bd, 384, 1, 3, 1, Same);
        let bdb = g.conv(&bd, 384, 3, 1, 1, Same);
        let bd = g.concat(&[bda, bdb]);
        let bp = g.avg_pool_same(&x, 3);
        let bp = g.conv(&bp, 192, 1, 1, 1, Same);
        x = g.concat(&[b1, b3, bd, bp]);
    }
    x
}

/// Small three-stage convolutional extractor for desk-scale runs.
pub fn tiny_conv<G: Graph>(g: &mut G, input: G::T) -> G::T {
    let x = g.conv(&input, 8, 3, 3, 2, Valid);
    let x = g.conv(&x, 16, 3, 3, 2, Valid);
    let wide = g.conv(&x, 32, 3, 3, 2, Valid);
    let pooled = g.max_pool(&x, 3, 2);
    g.concat(&[wide, pooled])
}
