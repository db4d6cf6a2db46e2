//! Masks a block of the bundled corpus at several rates and scores an
//! untrained model with the interval-restricted loss.

use mdlab::rng::{stream_rng, Stream};
use mdlab::textlab::{init_text_model, restricted_ce_loss, Corpus, TextItem};

fn main() -> mdlab::Result<()> {
    let corpus = Corpus::bundled(64)?;
    println!(
        "{} symbols, vocabulary {}",
        corpus.len(),
        corpus.num_symbols()
    );
    let mut rng = stream_rng(0, Stream::Masks);
    let params = init_text_model(&corpus, 64, 1.0, &mut rng);
    let x0 = corpus.ids()[1000..1064].to_vec();
    println!("t=0.00 {}", corpus.decode(&x0));
    for t in [0.1, 0.5, 0.9] {
        let item = TextItem::mask(x0.clone(), t, corpus.mask_id(), &mut rng);
        let loss = restricted_ce_loss(&params, &corpus, std::slice::from_ref(&item), None)?;
        println!("t={t:.2} {}  loss {loss:.3}", corpus.decode(&item.xt));
    }
    Ok(())
}
